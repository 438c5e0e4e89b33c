"""Spatial-temporal fusion network.

Two feature paths read the observed positions of a window:

* the fusion path embeds every (frame, agent) position with a small MLP and
  runs graph attention over the integrated spatiotemporal graph, so one
  node attends to neighbours in its own frame and to all agents one frame
  away;
* the ST-GCN path alternates per-frame graph convolutions with temporal
  convolutions.

Their outputs are concatenated per node and a GRU encoder-decoder turns
each agent's feature sequence into future displacements.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import tensor as tt
from .data import SceneWindow
from .graph import GraphConfig, IntegratedGraph, build_graph
from .tensor import DimensionError, Tensor

_ACTIVATIONS = {"relu": tt.relu, "elu": tt.elu, "tanh": tt.tanh}


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 16
    gat_dim: int = 16
    gat_layers: int = 2
    gat_heads: int = 1
    leaky_slope: float = 0.2
    stgcn_layers: int = 3
    stgcn_channels: int = 32
    temporal_kernel: int = 3
    gru_hidden: int = 64
    t_his: int = 6
    t_pred: int = 6
    mlp_activation: str = "relu"
    gat_activation: str = "elu"
    stgcn_activation: str = "relu"
    residual_decoder: bool = True
    stgcn_input: str = "displacement"
    stgcn_self_weights: bool = True

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, (int, float)) and not isinstance(value, bool) and not value > 0:
                raise ValueError(f"{f.name} must be positive, got {value}")
        if self.temporal_kernel % 2 == 0:
            raise ValueError(f"temporal_kernel must be odd, got {self.temporal_kernel}")
        if not 0 < self.leaky_slope < 1:
            raise ValueError("leaky_slope must lie in (0, 1)")
        if self.stgcn_input not in ("displacement", "position"):
            raise ValueError("stgcn_input must be 'displacement' or 'position'")
        for name in ("mlp_activation", "gat_activation", "stgcn_activation"):
            if getattr(self, name) not in _ACTIVATIONS:
                raise ValueError(f"{name} must be one of {sorted(_ACTIVATIONS)}")

    @property
    def fusion_width(self) -> int:
        return self.gat_heads * self.gat_dim

    @property
    def fused_width(self) -> int:
        return self.fusion_width + self.stgcn_channels


@dataclass(frozen=True, eq=False)
class NodeFeatures:
    values: Tensor       # [T, N, C]
    mask: np.ndarray     # [T, N] bool

    @property
    def width(self) -> int:
        return self.values.shape[-1]


@dataclass(frozen=True, eq=False)
class PredictionSet:
    displacements: Tensor  # [t_pred, N, 2], metres per frame
    positions: Tensor      # [t_pred, N, 2], window frame
    predicted: np.ndarray  # [N] bool


def _glorot(rng, fan_in, fan_out, shape):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(config: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    """Fresh parameter dict; the same (config, seed) always yields the same bytes."""
    rng = np.random.default_rng(seed)
    F, Fp, heads, H = config.embed_dim, config.gat_dim, config.gat_heads, config.gru_hidden
    p: dict[str, np.ndarray] = {}
    p["embed.w1"] = _glorot(rng, 2, F, (2, F))
    p["embed.b1"] = np.zeros(F)
    p["embed.w2"] = _glorot(rng, F, F, (F, F))
    p["embed.b2"] = np.zeros(F)
    width = F
    for layer in range(config.gat_layers):
        p[f"gat{layer}.w"] = _glorot(rng, width, heads * Fp, (width, heads * Fp))
        p[f"gat{layer}.a"] = _glorot(rng, 2 * Fp, 1, (heads, 2 * Fp))
        width = heads * Fp
    width, C, k = 2, config.stgcn_channels, config.temporal_kernel
    for layer in range(config.stgcn_layers):
        p[f"stgcn{layer}.w"] = _glorot(rng, width, C, (width, C))
        p[f"stgcn{layer}.kernel"] = _glorot(rng, k * C, C, (k, C, C))
        p[f"stgcn{layer}.b"] = np.zeros(C)
        if config.stgcn_self_weights:
            p[f"stgcn{layer}.wself"] = _glorot(rng, width, C, (width, C))
        width = C
    bound = 1.0 / np.sqrt(H)
    for prefix, c_in in (("enc.", config.fused_width), ("dec.", 2)):
        p[prefix + "wx"] = rng.uniform(-bound, bound, (c_in, 3 * H))
        p[prefix + "wh"] = rng.uniform(-bound, bound, (H, 3 * H))
        p[prefix + "bx"] = rng.uniform(-bound, bound, 3 * H)
        p[prefix + "bh"] = rng.uniform(-bound, bound, 3 * H)
    p["head.w"] = _glorot(rng, H, 2, (H, 2))
    p["head.b"] = np.zeros(2)
    return {name: Tensor(value, requires_grad=True) for name, value in p.items()}


def _mask3(mask: np.ndarray) -> np.ndarray:
    return mask[..., None].astype(np.float64)


def embed(window: SceneWindow, params: dict[str, Tensor], config: ModelConfig = ModelConfig()) -> NodeFeatures:
    """Shared two-layer MLP on every observed (x, y); masked slots come out zero."""
    t_his = window.t_his
    mask = window.mask[:t_his]
    act = _ACTIVATIONS[config.mlp_activation]
    x = Tensor(window.positions[:t_his])
    h = act(tt.linear(x, params["embed.w1"], params["embed.b1"]))
    e = tt.linear(h, params["embed.w2"], params["embed.b2"])
    return NodeFeatures(e * _mask3(mask), mask)


def attention_support(graph: IntegratedGraph) -> np.ndarray:
    """Adjacency rows, with a lone self-entry for nodes that have no neighbour."""
    support = graph.adjacency.copy()
    lonely = ~support.any(axis=1)
    support[lonely, lonely] = True
    return support


def gat_layer(features: NodeFeatures, graph: IntegratedGraph, params: dict[str, Tensor],
              prefix: str = "gat0.", slope: float = 0.2, return_attention: bool = False):
    """Graph attention over the integrated graph.

    For node u the score of neighbour v is
    ``leaky_relu(a_src . W e_u + a_dst . W e_v)``; scores are softmaxed over
    the adjacency row of u and the output is the attention-weighted sum of
    the neighbours' ``W e_v``.  A node with no neighbour passes ``W e_u``
    through.  Heads are concatenated.

    With ``return_attention`` the ``[heads, M, M]`` weight matrix is
    returned as well (``M = T * N`` in time-major order).
    """
    W, a = params[prefix + "w"], params[prefix + "a"]
    T, N, C = features.values.shape
    if C != W.shape[0]:
        raise DimensionError(f"gat layer expects width {W.shape[0]}, got {C}")
    heads, two_fp = a.shape
    Fp = two_fp // 2
    M = T * N
    x = tt.reshape(features.values, (M, C))
    wh = tt.transpose(tt.reshape(x @ W, (M, heads, Fp)), (1, 0, 2))       # [heads, M, F']
    a_src = tt.reshape(a[:, :Fp], (heads, Fp, 1))
    a_dst = tt.reshape(a[:, Fp:], (heads, Fp, 1))
    src = wh @ a_src                                                        # [heads, M, 1]
    dst = tt.transpose(wh @ a_dst, (0, 2, 1))                               # [heads, 1, M]
    logits = tt.leaky_relu(src + dst, slope)
    alpha = tt.masked_softmax(logits, attention_support(graph)[None], axis=-1)
    out = tt.transpose(alpha @ wh, (1, 0, 2))                               # [M, heads, F']
    out = tt.reshape(out, (T, N, heads * Fp)) * _mask3(features.mask)
    result = NodeFeatures(out, features.mask)
    if return_attention:
        return result, alpha.data
    return result


def stf_block(window: SceneWindow, graph: IntegratedGraph, params: dict[str, Tensor],
              config: ModelConfig = ModelConfig()) -> NodeFeatures:
    """Embedding followed by the stacked attention layers."""
    feats = embed(window, params, config)
    act = _ACTIVATIONS[config.gat_activation]
    for layer in range(config.gat_layers):
        feats = gat_layer(feats, graph, params, f"gat{layer}.", config.leaky_slope)
        feats = NodeFeatures(act(feats.values), feats.mask)
    return feats


def normalized_adjacency(spatial: np.ndarray) -> np.ndarray:
    """``D^-1/2 (A + I) D^-1/2`` for each frame of a ``[T, N, N]`` stack."""
    a = spatial.astype(np.float64) + np.eye(spatial.shape[-1])
    d = 1.0 / np.sqrt(a.sum(axis=-1))
    return a * d[:, :, None] * d[:, None, :]


def stgcn_input(window: SceneWindow, kind: str = "displacement") -> np.ndarray:
    """Per-node input channels of the ST-GCN path, ``[T_his, N, 2]``.

    ``displacement`` is the step from the previous frame (zero unless the
    agent is observed in both); ``position`` is the raw normalized (x, y).
    """
    t_his = window.t_his
    pos = window.positions[:t_his]
    if kind == "position":
        return pos.copy()
    mask = window.mask[:t_his]
    out = np.zeros_like(pos)
    both = mask[1:] & mask[:-1]
    out[1:] = np.where(both[..., None], pos[1:] - pos[:-1], 0.0)
    return out


def stgcn_layers(x: Tensor, mask: np.ndarray, spatial: np.ndarray, params: dict[str, Tensor],
                 config: ModelConfig = ModelConfig()) -> NodeFeatures:
    """Graph convolution then temporal convolution, ``config.stgcn_layers`` times.

    With ``config.stgcn_self_weights`` each node's own features also pass
    through a separate matrix, so a layer can weigh the node apart from its
    neighbourhood average.
    """
    m3 = _mask3(mask)
    adj = Tensor(normalized_adjacency(np.asarray(spatial, dtype=bool)))
    act = _ACTIVATIONS[config.stgcn_activation]
    x = x * m3
    for layer in range(config.stgcn_layers):
        g = (adj @ x) @ params[f"stgcn{layer}.w"]
        if config.stgcn_self_weights:
            g = g + x @ params[f"stgcn{layer}.wself"]
        y = tt.conv_time(g, params[f"stgcn{layer}.kernel"]) + params[f"stgcn{layer}.b"]
        if y.shape[-1] == x.shape[-1]:
            y = y + x
        x = act(y) * m3
    return NodeFeatures(x, mask)


def stgcn_block(window: SceneWindow, spatial: np.ndarray, params: dict[str, Tensor],
                config: ModelConfig = ModelConfig()) -> NodeFeatures:
    """ST-GCN path on the window's displacement (or position) channels."""
    x = Tensor(stgcn_input(window, config.stgcn_input))
    return stgcn_layers(x, window.mask[:window.t_his], spatial, params, config)


def fuse(a: NodeFeatures, b: NodeFeatures) -> NodeFeatures:
    if a.values.shape[:2] != b.values.shape[:2]:
        raise DimensionError(f"cannot fuse grids {a.values.shape[:2]} and {b.values.shape[:2]}")
    return NodeFeatures(tt.concat([a.values, b.values], axis=-1), a.mask)


def last_displacement(window: SceneWindow) -> np.ndarray:
    """Per-agent displacement into the anchor frame; zero without two observations."""
    t = window.t_his - 1
    if t == 0:
        return np.zeros((window.n_agents, 2))
    both = window.mask[t] & window.mask[t - 1]
    return np.where(both[:, None], window.positions[t] - window.positions[t - 1], 0.0)


def decode(fused: NodeFeatures, window: SceneWindow, params: dict[str, Tensor],
           config: ModelConfig = ModelConfig()) -> PredictionSet:
    """GRU encoder over observed features, autoregressive GRU decoder over displacements.

    The encoder holds an agent's state through frames where it is unobserved.
    """
    t_his = window.t_his
    N = window.n_agents
    h = Tensor(np.zeros((N, config.gru_hidden)))
    for t in range(t_his):
        h_new = tt.gru_cell(fused.values[t], h, params, "enc.")
        seen = fused.mask[t][:, None].astype(np.float64)
        h = h + seen * (h_new - h)
    d = Tensor(last_displacement(window))
    steps = []
    for _ in range(config.t_pred):
        h = tt.gru_cell(d, h, params, "dec.")
        step = tt.linear(h, params["head.w"], params["head.b"])
        d = d + step if config.residual_decoder else step
        steps.append(d)
    disp = tt.stack(steps, axis=0)
    predicted = window.predicted.copy()
    keep = predicted[None, :, None].astype(np.float64)
    positions = (tt.cumsum(disp, axis=0) + window.positions[t_his - 1]) * keep
    return PredictionSet(disp, positions, predicted)


def forward(window: SceneWindow, params: dict[str, Tensor], config: ModelConfig = ModelConfig(),
            graph_config: GraphConfig | None = None) -> PredictionSet:
    """Full pipeline on one normalized window."""
    if window.t_his != config.t_his:
        raise DimensionError(f"window has t_his={window.t_his}, model expects {config.t_his}")
    d_close = (graph_config or GraphConfig(t_his=config.t_his)).d_close
    graph = build_graph(window.positions[:window.t_his], window.mask[:window.t_his], d_close)
    a = stf_block(window, graph, params, config)
    b = stgcn_block(window, graph.spatial, params, config)
    return decode(fuse(a, b), window, params, config)

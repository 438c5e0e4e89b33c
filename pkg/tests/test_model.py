import math

import numpy as np
import pytest

from stfusion import tensor as tt
from stfusion.data import AgentType, SceneWindow
from stfusion.graph import build_graph, integrate, neighborhood
from stfusion.model import (ModelConfig, NodeFeatures, decode, embed, forward, fuse, gat_layer,
                            init_params, normalized_adjacency, stf_block, stgcn_block, stgcn_input,
                            stgcn_layers)
from stfusion.tensor import DimensionError, Tensor

CFG = ModelConfig()


def make_window(positions, mask=None, t_his=6, types=None):
    positions = np.asarray(positions, dtype=np.float64)
    T, N, _ = positions.shape
    mask = np.ones((T, N), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    positions = np.where(mask[..., None], positions, 0.0)
    types = types or tuple([AgentType.SMALL_VEHICLE, AgentType.PEDESTRIAN, AgentType.BICYCLIST][n % 3]
                           for n in range(N))
    return SceneWindow(positions, mask, tuple(types), np.arange(1, N + 1), np.arange(T), t_his)


def random_window(seed, N=4, T=12, t_his=6, spread=8.0, drop=0.0):
    rng = np.random.default_rng(seed)
    start = rng.uniform(-spread, spread, size=(N, 2))
    vel = rng.uniform(-1.0, 1.0, size=(N, 2))
    pos = start[None] + np.arange(T)[:, None, None] * vel[None]
    mask = rng.random((T, N)) >= drop
    mask[t_his - 1, 0] = True
    return make_window(pos, mask, t_his)


def features(window, values):
    m = window.mask[:window.t_his]
    return NodeFeatures(Tensor(np.where(m[..., None], values, 0.0)), m)


# -- embed ---------------------------------------------------------------------------


def test_embed_shape():
    w = random_window(0)
    assert embed(w, init_params(CFG), CFG).values.shape == (6, 4, 16)


def test_embed_weight_sharing():
    pos = np.zeros((12, 3, 2))
    pos[:, 0] = pos[:, 2] = [1.5, -2.0]
    pos[:, 1] = [4.0, 4.0]
    e = embed(make_window(pos), init_params(CFG), CFG).values.data
    assert np.array_equal(e[:, 0], e[:, 2])
    assert np.array_equal(e[2, 0], e[4, 0])


def test_embed_masked_slot_zero():
    w = random_window(1)
    mask = w.mask.copy()
    mask[3, 2] = False
    w = make_window(w.positions, mask)
    e = embed(w, init_params(CFG), CFG).values.data
    assert not e[3, 2].any()
    assert e[3, 1].any()


# -- graph attention -------------------------------------------------------------------------


def gat_params(rng, c_in, f_out, heads=1):
    return {"g.w": Tensor(rng.normal(size=(c_in, heads * f_out)), requires_grad=True),
            "g.a": Tensor(rng.normal(size=(heads, 2 * f_out)), requires_grad=True)}


def dense_loop_gat(x, adjacency, W, a, slope):
    """Attention layer written as explicit per-node loops over neighbours."""
    M = len(x)
    Fp = len(W[0])
    wx = [[sum(x[i][c] * W[c][f] for c in range(len(x[i]))) for f in range(Fp)] for i in range(M)]
    out = []
    for u in range(M):
        nbrs = [v for v in range(M) if adjacency[u][v]] or [u]
        scores = []
        for v in nbrs:
            s = sum(a[f] * wx[u][f] for f in range(Fp)) + sum(a[Fp + f] * wx[v][f] for f in range(Fp))
            scores.append(s if s >= 0 else slope * s)
        top = max(scores)
        weights = [math.exp(s - top) for s in scores]
        total = sum(weights)
        out.append([sum(weights[k] / total * wx[v][f] for k, v in enumerate(nbrs)) for f in range(Fp)])
    return np.array(out)


def test_gat_matches_dense_loop_on_three_nodes():
    rng = np.random.default_rng(5)
    # three agents in one frame: a path 0-1-2
    spatial = np.array([[[0, 1, 0], [1, 0, 1], [0, 1, 0]]], dtype=bool)
    graph = integrate(spatial, np.ones((1, 3), dtype=bool))
    x = rng.normal(size=(1, 3, 4))
    p = gat_params(rng, 4, 3)
    out = gat_layer(NodeFeatures(Tensor(x), np.ones((1, 3), dtype=bool)), graph, p, "g.", 0.2).values.data
    expected = dense_loop_gat(x[0].tolist(), graph.adjacency.tolist(), p["g.w"].data.tolist(),
                              p["g.a"].data[0].tolist(), 0.2)
    np.testing.assert_allclose(out[0], expected, rtol=1e-12, atol=1e-14)


def test_gat_matches_dense_loop_on_integrated_graph():
    rng = np.random.default_rng(6)
    w = random_window(6, N=3, spread=12.0, drop=0.2)
    graph = build_graph(w.history, w.mask[:6], 10.0)
    x = rng.normal(size=(6, 3, 5))
    p = gat_params(rng, 5, 4)
    out = gat_layer(features(w, x), graph, p, "g.", 0.2).values.data.reshape(18, 4)
    flat = np.where(w.mask[:6, :, None], x, 0.0).reshape(18, 5)
    expected = dense_loop_gat(flat.tolist(), graph.adjacency.tolist(), p["g.w"].data.tolist(),
                              p["g.a"].data[0].tolist(), 0.2)
    valid = w.mask[:6].reshape(-1)
    np.testing.assert_allclose(out[valid], expected[valid], rtol=1e-12, atol=1e-14)


def test_attention_rows_normalized_on_support():
    w = random_window(2, N=5, drop=0.2)
    graph = build_graph(w.history, w.mask[:6], 10.0)
    params = init_params(CFG, 3)
    feats = embed(w, params, CFG)
    _, alpha = gat_layer(feats, graph, params, "gat0.", 0.2, return_attention=True)
    support = graph.adjacency.copy()
    lonely = ~support.any(axis=1)
    support[lonely, lonely] = True
    np.testing.assert_allclose(alpha[0].sum(axis=1), 1.0, atol=1e-12)
    assert np.all(alpha[0][~support] == 0.0)


def test_equal_features_give_uniform_attention():
    w = random_window(4, N=4)
    graph = build_graph(w.history, w.mask[:6], 15.0)
    rng = np.random.default_rng(0)
    x = np.broadcast_to(rng.normal(size=5), (6, 4, 5)).copy()
    _, alpha = gat_layer(features(w, x), graph, gat_params(rng, 5, 3), "g.", 0.2, return_attention=True)
    for i in range(graph.n_nodes):
        nbrs = neighborhood(graph, *divmod(i, 4))
        np.testing.assert_allclose(alpha[0, i, nbrs], 1.0 / len(nbrs), rtol=1e-12)


def test_isolated_node_falls_back_to_self():
    graph = integrate(np.zeros((1, 1, 1), dtype=bool), np.ones((1, 1), dtype=bool))
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1, 1, 3))
    p = gat_params(rng, 3, 2)
    out = gat_layer(NodeFeatures(Tensor(x), np.ones((1, 1), dtype=bool)), graph, p, "g.").values.data
    np.testing.assert_allclose(out[0, 0], x[0, 0] @ p["g.w"].data, rtol=1e-14)


def test_gat_width_mismatch():
    w = random_window(0)
    graph = build_graph(w.history, w.mask[:6], 25.0)
    with pytest.raises(DimensionError):
        gat_layer(features(w, np.ones((6, 4, 7))), graph, gat_params(np.random.default_rng(0), 5, 3), "g.")


def test_multi_head_concatenates():
    cfg = ModelConfig(gat_heads=3)
    w = random_window(0)
    out = stf_block(w, build_graph(w.history, w.mask[:6], 25.0), init_params(cfg), cfg)
    assert out.values.shape == (6, 4, 48)


def test_gat_layer_gradients():
    rng = np.random.default_rng(8)
    w = random_window(8, N=3, drop=0.2)
    graph = build_graph(w.history, w.mask[:6], 12.0)
    x = Tensor(rng.normal(size=(6, 3, 4)) * w.mask[:6, :, None])
    p = gat_params(rng, 4, 3)
    p["g.w"].data *= 0.5
    weights = rng.normal(size=(6, 3, 3))
    f = lambda: tt.sum(gat_layer(NodeFeatures(x, w.mask[:6]), graph, p, "g.", 0.2).values * weights)
    assert tt.fd_check(f, {**p, "x": x}) < 1e-4


# -- S-T fusion block ------------------------------------------------------------------


def test_stf_block_shape_and_determinism():
    w = random_window(3)
    graph = build_graph(w.history, w.mask[:6], 25.0)
    params = init_params(CFG, 1)
    a = stf_block(w, graph, params, CFG).values.data
    b = stf_block(w, graph, params, CFG).values.data
    assert a.shape == (6, 4, 16)
    assert a.tobytes() == b.tobytes()


@pytest.mark.parametrize("t", range(6))
def test_stf_single_agent_receptive_field(t):
    # one agent: the graph is its temporal self-chain, so two layers reach two frames each way
    rng = np.random.default_rng(t)
    pos = rng.normal(size=(12, 1, 2))
    params = init_params(CFG, 2)
    base = make_window(pos)
    graph = build_graph(base.history, base.mask[:6], 25.0)
    bumped = pos.copy()
    bumped[t, 0] += [0.7, -0.4]
    out0 = stf_block(base, graph, params, CFG).values.data[:, 0]
    out1 = stf_block(make_window(bumped), graph, params, CFG).values.data[:, 0]
    changed = np.abs(out1 - out0).max(axis=1) > 0
    for s in range(6):
        if abs(s - t) > 2:
            assert not changed[s]
    assert changed[t]


# -- ST-GCN block ---------------------------------------------------------------------------


def test_normalized_adjacency_without_edges_is_identity():
    assert np.array_equal(normalized_adjacency(np.zeros((2, 3, 3), dtype=bool)), np.broadcast_to(np.eye(3), (2, 3, 3)))


def test_normalized_adjacency_values():
    a = normalized_adjacency(np.array([[[0, 1], [1, 0]]], dtype=bool))
    np.testing.assert_allclose(a[0], [[0.5, 0.5], [0.5, 0.5]])


def test_stgcn_without_edges_is_per_node_linear():
    cfg = ModelConfig(stgcn_layers=1)
    w = random_window(9, N=3)
    params = init_params(cfg, 4)
    out = stgcn_block(w, np.zeros((6, 3, 3), dtype=bool), params, cfg).values.data
    lin = stgcn_input(w) @ (params["stgcn0.w"].data + params["stgcn0.wself"].data)
    k = params["stgcn0.kernel"].data
    pad = np.concatenate([np.zeros((1, 3, 32)), lin, np.zeros((1, 3, 32))])
    conv = sum(pad[j:j + 6] @ k[j] for j in range(3)) + params["stgcn0.b"].data
    np.testing.assert_allclose(out, np.maximum(conv, 0.0), rtol=1e-12, atol=1e-13)


def test_stgcn_self_weights_separate_agents_on_a_complete_graph():
    # the normalized adjacency of a complete graph averages every row alike
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(size=(6, 3, 2)))
    mask = np.ones((6, 3), dtype=bool)
    spatial = np.ones((6, 3, 3), dtype=bool) & ~np.eye(3, dtype=bool)
    plain = ModelConfig(stgcn_self_weights=False)
    out = stgcn_layers(x, mask, spatial, init_params(plain, 1), plain).values.data
    np.testing.assert_allclose(out[:, 0], out[:, 1], rtol=0, atol=1e-12)
    out = stgcn_layers(x, mask, spatial, init_params(ModelConfig(), 1), ModelConfig()).values.data
    assert np.abs(out[:, 0] - out[:, 1]).max() > 1e-3


def test_plain_stgcn_has_no_self_weights():
    params = init_params(ModelConfig(stgcn_self_weights=False))
    assert not any(k.endswith(".wself") for k in params)


def test_stgcn_input_channels():
    pos = np.zeros((8, 2, 2))
    pos[:, 0, 0] = np.arange(8) * 0.5
    pos[:, 1] = [[3.0, 1.0], [3.0, 2.0], [9.0, 9.0], [3.0, 4.0], [3.0, 5.0], [3.0, 6.0], [0, 0], [0, 0]]
    mask = np.ones((8, 2), dtype=bool)
    mask[2, 1] = False
    w = make_window(pos, mask, t_his=6)
    x = stgcn_input(w)
    assert x.shape == (6, 2, 2)
    np.testing.assert_array_equal(x[:, 0], [[0, 0]] + [[0.5, 0]] * 5)
    np.testing.assert_array_equal(x[:, 1], [[0, 0], [0, 1], [0, 0], [0, 0], [0, 1], [0, 1]])
    np.testing.assert_array_equal(stgcn_input(w, "position"), w.positions[:6])


def test_stgcn_shape():
    w = random_window(0)
    spatial = build_graph(w.history, w.mask[:6], 25.0).spatial
    assert stgcn_block(w, spatial, init_params(CFG), CFG).values.shape == (6, 4, 32)


@pytest.mark.parametrize("t", [0, 2, 5, 9])
def test_stgcn_temporal_receptive_field(t):
    # a long sequence so the three-frame reach is visible away from the edges
    T, N = 10, 3
    rng = np.random.default_rng(t)
    x = rng.normal(size=(T, N, 2))
    mask = np.ones((T, N), dtype=bool)
    spatial = np.ones((T, N, N), dtype=bool) & ~np.eye(N, dtype=bool)
    params = init_params(CFG, 5)
    bumped = x.copy()
    bumped[t] += 0.3
    out0 = stgcn_layers(Tensor(x), mask, spatial, params, CFG).values.data
    out1 = stgcn_layers(Tensor(bumped), mask, spatial, params, CFG).values.data
    changed = np.abs(out1 - out0).reshape(T, -1).max(axis=1) > 0
    for s in range(T):
        if abs(s - t) > 3:
            assert not changed[s]
    assert changed[t]


# -- fusion -----------------------------------------------------------------------------------


def test_fuse_width_and_zero_preservation():
    m = np.ones((6, 4), dtype=bool)
    m[2, 1] = False
    a = Tensor(np.random.default_rng(0).normal(size=(6, 4, 16)) * m[..., None])
    fused = fuse(NodeFeatures(a, m), NodeFeatures(Tensor(np.zeros((6, 4, 32))), m))
    assert fused.values.shape == (6, 4, 48)
    assert np.array_equal(fused.values.data[..., :16], a.data)
    assert not fused.values.data[2, 1].any()


def test_fuse_grid_mismatch():
    m = np.ones((6, 4), dtype=bool)
    with pytest.raises(DimensionError):
        fuse(NodeFeatures(Tensor(np.zeros((6, 4, 2))), m), NodeFeatures(Tensor(np.zeros((6, 3, 2))), m[:, :3]))


# -- decoder ----------------------------------------------------------------------------------


def _fused(w, params, cfg=CFG):
    graph = build_graph(w.history, w.mask[:w.t_his], 25.0)
    return fuse(stf_block(w, graph, params, cfg), stgcn_block(w, graph.spatial, params, cfg))


def test_decode_emits_t_pred_steps():
    w = random_window(0)
    pred = decode(_fused(w, init_params(CFG)), w, init_params(CFG), CFG)
    assert pred.displacements.shape == (6, 4, 2)
    assert pred.positions.shape == (6, 4, 2)


def test_zero_displacements_hold_last_position():
    # stationary history gives a zero first decoder input; a zeroed head then emits zero displacements
    pos = np.broadcast_to(np.random.default_rng(1).normal(size=(1, 3, 2)) * 5, (12, 3, 2)).copy()
    w = make_window(pos)
    params = init_params(CFG, 2)
    params["head.w"].data[:] = 0.0
    params["head.b"].data[:] = 0.0
    pred = decode(_fused(w, params), w, params, CFG)
    assert not pred.displacements.data.any()
    np.testing.assert_array_equal(pred.positions.data, np.broadcast_to(pos[5], (6, 3, 2)))


def _zero_head(params):
    params["head.w"].data[:] = 0.0
    params["head.b"].data[:] = 0.0
    return params


def test_direct_decoder_zero_head_holds_last_position():
    cfg = ModelConfig(residual_decoder=False)
    w = random_window(7)
    params = _zero_head(init_params(cfg, 7))
    pred = decode(_fused(w, params, cfg), w, params, cfg)
    assert not pred.displacements.data.any()
    np.testing.assert_array_equal(pred.positions.data, np.broadcast_to(w.positions[5], (6, 4, 2)))


def test_residual_decoder_zero_head_extrapolates_constant_velocity():
    w = random_window(8)
    params = _zero_head(init_params(CFG, 8))
    pred = decode(_fused(w, params), w, params, CFG)
    step = w.positions[5] - w.positions[4]
    expected = w.positions[5] + np.arange(1, 7)[:, None, None] * step
    np.testing.assert_allclose(pred.positions.data, expected, rtol=1e-12, atol=1e-12)


def test_positions_are_cumulative_displacements():
    w = random_window(3)
    params = init_params(CFG, 3)
    pred = decode(_fused(w, params), w, params, CFG)
    np.testing.assert_allclose(pred.positions.data,
                               w.positions[5] + np.cumsum(pred.displacements.data, axis=0), rtol=1e-14)


@pytest.mark.parametrize("k", [1, 3, 5])
def test_decoder_truncation_consistency(k):
    w = random_window(11)
    params = init_params(CFG, 6)
    full = forward(w, params, CFG).displacements.data
    short = forward(w, params, ModelConfig(t_pred=k)).displacements.data
    assert short.shape[0] == k
    assert np.array_equal(full[:k], short)


def test_non_predicted_agent_has_no_positions():
    w = random_window(12, N=3)
    mask = w.mask.copy()
    mask[5, 2] = False
    w = make_window(w.positions, mask)
    pred = forward(w, init_params(CFG), CFG)
    assert pred.predicted.tolist() == [True, True, False]
    assert not pred.positions.data[:, 2].any()


# -- full model ---------------------------------------------------------------------------------


def add_phantoms(w, count, seed=0):
    rng = np.random.default_rng(seed)
    T, N = w.mask.shape
    pos = np.concatenate([w.positions, rng.normal(size=(T, count, 2)) * 5], axis=1)
    mask = np.concatenate([w.mask, np.zeros((T, count), dtype=bool)], axis=1)
    return make_window(pos, mask, w.t_his, w.agent_types + (AgentType.OTHER,) * count)


def permute(w, order):
    return make_window(w.positions[:, order], w.mask[:, order], w.t_his, tuple(w.agent_types[i] for i in order))


@pytest.mark.parametrize("seed", range(4))
def test_forward_finite(seed):
    w = random_window(seed, N=5, spread=40.0, drop=0.3)
    pred = forward(w, init_params(CFG, seed), CFG)
    assert np.isfinite(pred.positions.data).all()


@pytest.mark.parametrize("seed", range(4))
def test_phantom_agents_do_not_change_predictions(seed):
    w = random_window(seed, N=4, drop=0.2)
    params = init_params(CFG, seed)
    base = forward(w, params, CFG).positions.data
    padded = forward(add_phantoms(w, 3, seed), params, CFG).positions.data
    assert np.abs(padded[:, :4] - base).max() <= 1e-9


@pytest.mark.parametrize("seed", range(4))
def test_permutation_equivariance(seed):
    w = random_window(seed, N=5, drop=0.2)
    order = np.random.default_rng(seed).permutation(5)
    params = init_params(CFG, seed)
    base = forward(w, params, CFG).positions.data
    perm = forward(permute(w, order), params, CFG).positions.data
    assert np.abs(perm - base[:, order]).max() <= 1e-12


def test_init_params_deterministic():
    a, b = init_params(CFG, 9), init_params(CFG, 9)
    assert list(a) == list(b)
    assert all(a[k].data.tobytes() == b[k].data.tobytes() for k in a)


@pytest.mark.parametrize("kwargs", [dict(temporal_kernel=4), dict(gru_hidden=0), dict(leaky_slope=1.5),
                                    dict(gat_activation="swish")])
def test_model_config_validation(kwargs):
    with pytest.raises(ValueError):
        ModelConfig(**kwargs)

"""Flat ``key=value`` run configuration.

One setting per line, ``#`` starts a comment.  Every key has a default and
unknown keys are rejected, so a resolved config fully describes a run.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .graph import GraphConfig
from .model import ModelConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # windowing
    t_his: int = 6
    t_pred: int = 6
    stride: int = 1
    n_max: int = 32
    # graph
    d_close: float = 25.0
    # model
    embed_dim: int = 16
    gat_dim: int = 16
    gat_layers: int = 2
    gat_heads: int = 1
    leaky_slope: float = 0.2
    stgcn_layers: int = 3
    stgcn_channels: int = 32
    temporal_kernel: int = 3
    gru_hidden: int = 64
    mlp_activation: str = "relu"
    gat_activation: str = "elu"
    stgcn_activation: str = "relu"
    residual_decoder: bool = True
    stgcn_input: str = "displacement"
    stgcn_self_weights: bool = True
    # training
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 500
    batch_size: int = 1
    seed: int = 0
    checkpoint_interval: int = 50
    clip_norm: float = 5.0
    loss: str = "mse"
    eval_interval: int = 1
    augment: bool = True
    lr_schedule: str = "cosine"

    def __post_init__(self):
        # constructing the sub-configs runs their validation
        self.model_config()
        self.graph_config()
        self.train_config()

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def model_config(self) -> ModelConfig:
        names = {f.name for f in fields(ModelConfig)}
        return ModelConfig(**{k: getattr(self, k) for k in names})

    def graph_config(self) -> GraphConfig:
        return GraphConfig(d_close=self.d_close, t_his=self.t_his)

    def train_config(self) -> TrainConfig:
        return TrainConfig(lr=self.lr, beta1=self.beta1, beta2=self.beta2, adam_eps=self.adam_eps,
                           epochs=self.epochs, batch_size=self.batch_size, seed=self.seed,
                           checkpoint_interval=self.checkpoint_interval, clip_norm=self.clip_norm,
                           loss=self.loss, eval_interval=self.eval_interval, augment=self.augment,
                           lr_schedule=self.lr_schedule)

    def to_dict(self) -> dict[str, str]:
        return {f.name: _format(getattr(self, f.name)) for f in fields(self)}

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.to_dict().items())

    def with_updates(self, **updates) -> "RunConfig":
        return replace(self, **updates)

    @classmethod
    def from_mapping(cls, values: dict[str, str], base: "RunConfig | None" = None) -> "RunConfig":
        base = base or cls()
        types = {f.name: f.type for f in fields(cls)}
        updates = {}
        for key, raw in values.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            kind = types[key]
            try:
                if kind == "int":
                    updates[key] = int(raw)
                elif kind == "float":
                    updates[key] = float(raw)
                elif kind == "bool":
                    updates[key] = _parse_bool(raw)
                else:
                    updates[key] = str(raw)
            except ValueError:
                raise ConfigError(f"config key {key!r}: cannot read {raw!r} as {kind}") from None
        try:
            return replace(base, **updates)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_text(cls, text: str, base: "RunConfig | None" = None) -> "RunConfig":
        return cls.from_mapping(parse_key_values(text), base)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def _format(value) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def parse_key_values(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key=value")
        key = key.strip()
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def _parse_bool(raw) -> bool:
    if isinstance(raw, bool):
        return raw
    text = str(raw).strip().lower()
    if text in ("true", "1", "yes"):
        return True
    if text in ("false", "0", "no"):
        return False
    raise ValueError(raw)

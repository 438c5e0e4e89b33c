"""Loss, training loop, checkpoints and the held-out evaluation harness.

Every source of randomness derives from the run seed: parameter init from
``seed``, the held-out split from ``seed``, and the visiting order of epoch
``e`` from ``(seed, e)``.  Resuming from a checkpoint therefore replays the
uninterrupted run exactly.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

import numpy as np

from . import checkpoint as ckpt
from . import tensor as tt
from .data import SceneWindow, rotate_window
from .metrics import evaluate
from .model import ModelConfig, PredictionSet, forward, init_params
from .optim import OptimizerState, adam_step, clip_by_global_norm
from .tensor import GradTape, Tensor

if TYPE_CHECKING:
    from .config import RunConfig

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
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
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        for name in ("epochs", "batch_size", "checkpoint_interval", "clip_norm", "eval_interval"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.loss not in ("mse", "smooth_l1"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 1-based ``epoch``; cosine decays from ``lr`` towards zero at the last epoch."""
        if self.lr_schedule == "constant":
            return self.lr
        return 0.5 * self.lr * (1.0 + math.cos(math.pi * (epoch - 1) / self.epochs))


def loss(pred: PredictionSet, window: SceneWindow, kind: str = "mse") -> Tensor:
    """Mean squared position error over scored (agent, horizon) pairs.

    Scored means predicted (valid at the anchor frame) and observed at that
    future frame.  ``kind="smooth_l1"`` swaps the squared error for a
    per-coordinate Huber penalty.
    """
    if pred.positions.shape != window.future.shape:
        raise ValueError(f"prediction {pred.positions.shape} vs truth {window.future.shape}")
    scored = window.mask[window.t_his:] & window.predicted[None, :]
    count = int(scored.sum())
    if count == 0:
        raise ValueError("loss: no scored (agent, horizon) pairs")
    diff = pred.positions - window.future
    per_coord = tt.square(diff) if kind == "mse" else tt.smooth_l1(diff)
    weight = scored[..., None].astype(np.float64) / count
    return tt.sum(per_coord * weight)


def split_holdout(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic 80/20 split of window indices; fewer than five windows are all training."""
    order = np.random.default_rng(seed).permutation(n)
    n_val = n // 5
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def predict(windows: Sequence[SceneWindow], params: dict[str, Tensor], config: ModelConfig,
            graph_config=None) -> list[PredictionSet]:
    return [forward(w, params, config, graph_config) for w in windows]


def train_epoch(params: dict[str, Tensor], windows: Sequence[SceneWindow], state: OptimizerState,
                config: TrainConfig, model_config: ModelConfig = ModelConfig(), graph_config=None,
                epoch: int = 0):
    """One pass over ``windows`` in seeded shuffled order.

    With ``config.augment`` every window is seen under a fresh random
    rotation (and a mirror half of the time); scenes have no preferred
    orientation, so this is free extra data.

    Returns ``(params, state, mean_loss)`` where the mean is over windows,
    each loss taken before that batch's update.
    """
    if not windows:
        raise TrainingError("train_epoch needs at least one window")
    state.lr = config.lr_at(epoch)
    rng = np.random.default_rng([config.seed, epoch])
    order = rng.permutation(len(windows))
    angles = rng.uniform(0.0, 2.0 * math.pi, len(windows))
    mirrors = rng.random(len(windows)) < 0.5
    total = 0.0
    for start in range(0, len(order), config.batch_size):
        batch = order[start:start + config.batch_size]
        with GradTape(params) as tape:
            batch_loss = None
            for i in batch:
                w = rotate_window(windows[i], angles[i], mirrors[i]) if config.augment else windows[i]
                li = loss(forward(w, params, model_config, graph_config), w, config.loss)
                if not math.isfinite(li.item()):
                    raise TrainingError(f"non-finite loss on window {int(i)}")
                total += li.item()
                batch_loss = li if batch_loss is None else batch_loss + li
            batch_loss = batch_loss * (1.0 / len(batch))
        grads = tape.backward(batch_loss)
        clip_by_global_norm(grads, config.clip_norm)
        adam_step(params, grads, state)
    return params, state, total / len(windows)


@dataclass
class FitResult:
    params: dict[str, Tensor]
    state: OptimizerState
    history: list[tuple[int, float, float]] = field(default_factory=list)
    train_idx: np.ndarray | None = None
    val_idx: np.ndarray | None = None


def heldout_wsade(windows, params, model_config, graph_config) -> float:
    if not windows:
        return math.nan
    report = evaluate(predict(windows, params, model_config, graph_config), windows)
    return math.nan if report.wsade is None else report.wsade


def save_checkpoint(path, params: dict[str, Tensor], state: OptimizerState, config: "RunConfig",
                    epoch: int, history: Sequence[tuple[int, float, float]] = ()) -> None:
    header = {"kind": "stf-model", "epoch": str(epoch), "optim.step": str(state.step)}
    header.update({f"config.{k}": v for k, v in config.to_dict().items()})
    arrays = {f"param/{k}": p.data for k, p in params.items()}
    if state.step:
        arrays.update({f"adam.m/{k}": state.m[k] for k in params})
        arrays.update({f"adam.v/{k}": state.v[k] for k in params})
    arrays["history"] = np.array(history, dtype=np.float64).reshape(-1, 3)
    ckpt.save(path, header, arrays)


def load_checkpoint(path):
    """Return ``(params, state, config, epoch, history)`` from a checkpoint file."""
    from .config import RunConfig

    header, arrays = ckpt.load(path)
    if header.get("kind") != "stf-model":
        raise ckpt.CheckpointError("not a model checkpoint")
    config = RunConfig.from_mapping({k[len("config."):]: v for k, v in header.items() if k.startswith("config.")})
    params = {k[len("param/"):]: Tensor(v.copy(), requires_grad=True)
              for k, v in arrays.items() if k.startswith("param/")}
    expected = init_params(config.model_config(), 0)
    if {k: v.shape for k, v in params.items()} != {k: v.shape for k, v in expected.items()}:
        raise ckpt.CheckpointError("checkpoint parameters do not match its config")
    tc = config.train_config()
    state = OptimizerState(lr=tc.lr, beta1=tc.beta1, beta2=tc.beta2, eps=tc.adam_eps,
                           step=int(header.get("optim.step", 0)))
    for k, p in params.items():
        state.m[k] = arrays.get(f"adam.m/{k}", np.zeros_like(p.data)).copy()
        state.v[k] = arrays.get(f"adam.v/{k}", np.zeros_like(p.data)).copy()
    history = [(int(e), float(l), float(w)) for e, l, w in arrays.get("history", np.zeros((0, 3)))]
    return params, state, config, int(header["epoch"]), history


def write_history(history: Sequence[tuple[int, float, float]], sink) -> None:
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(["epoch", "loss", "wsade"])
    for epoch, value, wsade in history:
        writer.writerow([epoch, repr(float(value)), repr(float(wsade))])


def fit(windows: Sequence[SceneWindow], config: "RunConfig", out_dir=None, resume=None,
        holdout: bool = True) -> FitResult:
    """Train for ``config.epochs`` epochs and record ``(epoch, loss, held-out WSADE)``.

    With ``out_dir`` a checkpoint ``epoch_XXXX.ckpt`` is written every
    ``checkpoint_interval`` epochs plus ``final.ckpt`` at the end.  With
    ``resume`` (a checkpoint path) training continues after its epoch.
    """
    tc, mc, gc = config.train_config(), config.model_config(), config.graph_config()
    windows = list(windows)
    if holdout:
        train_idx, val_idx = split_holdout(len(windows), tc.seed)
    else:
        train_idx, val_idx = np.arange(len(windows)), np.arange(0)
    train = [windows[i] for i in train_idx]
    val = [windows[i] for i in val_idx]
    if resume is not None:
        params, state, saved, start, history = load_checkpoint(resume)
        if saved.model_config() != mc:
            raise TrainingError("resume checkpoint was trained with a different model config")
        history = list(history)
    else:
        params = init_params(mc, tc.seed)
        state = OptimizerState.for_params(params, lr=tc.lr, beta1=tc.beta1, beta2=tc.beta2, eps=tc.adam_eps)
        start, history = 0, []
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    for epoch in range(start + 1, tc.epochs + 1):
        params, state, mean_loss = train_epoch(params, train, state, tc, mc, gc, epoch)
        wsade = math.nan
        if val and (epoch % tc.eval_interval == 0 or epoch == tc.epochs):
            wsade = heldout_wsade(val, params, mc, gc)
        history.append((epoch, mean_loss, wsade))
        log.debug("epoch %d loss %.6g wsade %.6g", epoch, mean_loss, wsade)
        if out is not None and epoch % tc.checkpoint_interval == 0:
            save_checkpoint(out / f"epoch_{epoch:04d}.ckpt", params, state, config, epoch, history)
    if out is not None:
        save_checkpoint(out / "final.ckpt", params, state, config, tc.epochs, history)
    return FitResult(params, state, history, train_idx, val_idx)

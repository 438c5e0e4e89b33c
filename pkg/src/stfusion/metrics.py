"""Displacement metrics: per-horizon RMSE, ADE/FDE and their category-weighted sums.

Categories are ``vehicle``, ``pedestrian`` and ``bike``; ``all`` pools every
scored agent, including those of type ``other``.  A category with no scored
agent is absent from a report, never zero.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Mapping, Sequence, TextIO

import numpy as np

from .data import FRAME_DT, SceneWindow

WEIGHTED = ("vehicle", "pedestrian", "bike")
ALL = "all"


class AbsentCategory(LookupError):
    """No scored (agent, horizon) pair for the requested category."""


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class MetricWeights:
    vehicle: float = 0.20
    pedestrian: float = 0.58
    bike: float = 0.22

    def __getitem__(self, category: str) -> float:
        return getattr(self, category)


WEIGHTS = MetricWeights()


def _select(categories, category_filter) -> np.ndarray:
    categories = np.asarray(categories)
    if category_filter is None or category_filter == ALL:
        return np.ones(categories.shape, dtype=bool)
    return categories == category_filter


def _errors(pred, truth) -> np.ndarray:
    diff = np.asarray(pred, dtype=np.float64) - np.asarray(truth, dtype=np.float64)
    return np.sqrt((diff * diff).sum(-1))


def rmse_horizon(pred, truth, mask, categories, category_filter=None, t: int = 1) -> float:
    """RMSE over scored agents at horizon ``t`` (1-based).

    ``pred`` and ``truth`` are ``[T_pred, N, 2]``, ``mask`` is ``[T_pred, N]``
    and ``categories`` names each agent's category.
    """
    mask = np.asarray(mask, dtype=bool)
    if not 1 <= t <= mask.shape[0]:
        raise ValueError(f"horizon {t} outside 1..{mask.shape[0]}")
    scored = mask[t - 1] & _select(categories, category_filter)
    if not scored.any():
        raise AbsentCategory(category_filter or ALL)
    err = _errors(np.asarray(pred)[t - 1], np.asarray(truth)[t - 1])[scored]
    return float(np.sqrt(np.mean(err * err)))


def ade_fde(pred, truth, mask, categories, category_filter=None) -> tuple[float, float]:
    """Pooled ADE over every scored (agent, horizon); FDE at each agent's last scored horizon."""
    mask = np.asarray(mask, dtype=bool) & _select(categories, category_filter)[None, :]
    if not mask.any():
        raise AbsentCategory(category_filter or ALL)
    err = _errors(pred, truth)
    ade = float(err[mask].mean())
    agents = np.flatnonzero(mask.any(axis=0))
    last = mask.shape[0] - 1 - np.argmax(mask[::-1, agents], axis=0)
    fde = float(err[last, agents].mean())
    return ade, fde


def weighted_summary(values: Mapping[str, float | None], weights: MetricWeights = WEIGHTS) -> float:
    """``0.20 * vehicle + 0.58 * pedestrian + 0.22 * bike``; raises if any is absent."""
    missing = [c for c in WEIGHTED if values.get(c) is None]
    if missing:
        raise AbsentCategory(", ".join(missing))
    return float(sum(weights[c] * values[c] for c in WEIGHTED))


@dataclass
class MetricsReport:
    ade: dict[str, float] = field(default_factory=dict)
    fde: dict[str, float] = field(default_factory=dict)
    rmse: dict[str, list[float | None]] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)
    wsade: float | None = None
    wsfde: float | None = None
    t_pred: int = 6

    @property
    def horizons_s(self) -> list[float]:
        return [FRAME_DT * (k + 1) for k in range(self.t_pred)]

    def rows(self) -> list[tuple[str, str, str, float]]:
        rows = []
        for cat in (*WEIGHTED, ALL):
            if cat in self.counts:
                rows.append(("count", cat, "all", float(self.counts[cat])))
        for cat in (*WEIGHTED, ALL):
            if cat in self.ade:
                rows.append(("ade", cat, "all", self.ade[cat]))
        if self.wsade is not None:
            rows.append(("wsade", "weighted", "all", self.wsade))
        for cat in (*WEIGHTED, ALL):
            if cat in self.fde:
                rows.append(("fde", cat, "final", self.fde[cat]))
        if self.wsfde is not None:
            rows.append(("wsfde", "weighted", "final", self.wsfde))
        for cat in (*WEIGHTED, "weighted", ALL):
            for h, value in zip(self.horizons_s, self.rmse.get(cat, [])):
                if value is not None:
                    rows.append(("rmse", cat, f"{h:.1f}", value))
        return rows

    def write_csv(self, sink: TextIO) -> None:
        writer = csv.writer(sink, lineterminator="\n")
        writer.writerow(["metric", "category", "horizon", "value"])
        for metric, cat, horizon, value in self.rows():
            writer.writerow([metric, cat, horizon, f"{value:.6f}"])

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()


def read_metrics_csv(stream: TextIO) -> list[tuple[str, str, str, float]]:
    reader = csv.reader(stream)
    header = next(reader, None)
    if header != ["metric", "category", "horizon", "value"]:
        raise ValueError("not a metrics CSV (bad or missing header)")
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 4:
            raise ValueError(f"line {lineno}: expected 4 columns")
        try:
            rows.append((row[0], row[1], row[2], float(row[3])))
        except ValueError:
            raise ValueError(f"line {lineno}: value {row[3]!r} is not numeric") from None
    return rows


def _stack_scored(predictions: Sequence, windows: Sequence[SceneWindow]):
    preds, truths, masks, cats = [], [], [], []
    for w, p in zip(windows, predictions):
        pos = getattr(p, "positions", p)
        pos = np.asarray(getattr(pos, "data", pos))
        if pos.shape != (w.t_pred, w.n_agents, 2):
            raise EvaluationError(f"prediction shape {pos.shape} does not match window")
        preds.append(pos)
        truths.append(w.future)
        masks.append(w.mask[w.t_his:] & w.predicted[None, :])
        cats.extend(w.categories)
    return (np.concatenate(preds, axis=1), np.concatenate(truths, axis=1),
            np.concatenate(masks, axis=1), np.array(cats))


def evaluate(predictions: Sequence, windows: Sequence[SceneWindow], weights: MetricWeights = WEIGHTS) -> MetricsReport:
    """Pool every window's scored agents and compute the full report."""
    if len(predictions) != len(windows):
        raise EvaluationError(f"{len(predictions)} predictions for {len(windows)} windows")
    if not windows:
        raise EvaluationError("nothing to evaluate")
    t_pred = windows[0].t_pred
    if any(w.t_pred != t_pred for w in windows):
        raise EvaluationError("windows disagree on t_pred")
    pred, truth, mask, cats = _stack_scored(predictions, windows)
    if not mask.any():
        raise EvaluationError("no scored agents")
    report = MetricsReport(t_pred=t_pred)
    for cat in (*WEIGHTED, ALL):
        sel = _select(cats, cat)
        n = int((mask.any(axis=0) & sel).sum())
        if n == 0:
            continue
        report.counts[cat] = n
        report.ade[cat], report.fde[cat] = ade_fde(pred, truth, mask, cats, cat)
        per_t = []
        for t in range(1, t_pred + 1):
            try:
                per_t.append(rmse_horizon(pred, truth, mask, cats, cat, t))
            except AbsentCategory:
                per_t.append(None)
        report.rmse[cat] = per_t
    try:
        report.wsade = weighted_summary(report.ade, weights)
        report.wsfde = weighted_summary(report.fde, weights)
    except AbsentCategory:
        pass
    weighted = []
    for k in range(t_pred):
        try:
            weighted.append(weighted_summary({c: report.rmse.get(c, [None] * t_pred)[k] for c in WEIGHTED}, weights))
        except AbsentCategory:
            weighted.append(None)
    if any(v is not None for v in weighted):
        report.rmse["weighted"] = weighted
    return report

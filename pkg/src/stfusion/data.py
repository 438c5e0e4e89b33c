"""ApolloScape-style trajectory records, scene windows and synthetic scenes.

A record line carries ten whitespace-separated fields::

    frame_id agent_id type x y z length width height heading

Frames tick at 2 fps.  Windows cover ``t_his + t_pred`` consecutive frames;
the last observed frame (index ``t_his - 1``) is the anchor frame.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence, TextIO

import numpy as np

FPS = 2.0
FRAME_DT = 1.0 / FPS


class ParseError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class EmptyWindowError(ValueError):
    """No agent is valid at the anchor frame."""


class AgentType(enum.Enum):
    SMALL_VEHICLE = "small_vehicle"
    BIG_VEHICLE = "big_vehicle"
    PEDESTRIAN = "pedestrian"
    MOTORCYCLIST = "motorcyclist"
    BICYCLIST = "bicyclist"
    OTHER = "other"

    @property
    def category(self) -> str:
        return _CATEGORY[self]

    @property
    def code(self) -> int:
        return _TYPE_TO_CODE[self]

    @classmethod
    def from_code(cls, code: int) -> "AgentType":
        return _CODE_TO_TYPE.get(code, cls.OTHER)


# dataset codes 1-5; 6 is a local extension so bicyclists can be told apart
_CODE_TO_TYPE = {
    1: AgentType.SMALL_VEHICLE,
    2: AgentType.BIG_VEHICLE,
    3: AgentType.PEDESTRIAN,
    4: AgentType.MOTORCYCLIST,
    5: AgentType.OTHER,
    6: AgentType.BICYCLIST,
}
_TYPE_TO_CODE = {t: c for c, t in _CODE_TO_TYPE.items()}

_CATEGORY = {
    AgentType.SMALL_VEHICLE: "vehicle",
    AgentType.BIG_VEHICLE: "vehicle",
    AgentType.PEDESTRIAN: "pedestrian",
    AgentType.MOTORCYCLIST: "bike",
    AgentType.BICYCLIST: "bike",
    AgentType.OTHER: "other",
}

CATEGORIES = ("vehicle", "pedestrian", "bike", "other")


@dataclass(frozen=True)
class TrajectoryRecord:
    frame_id: int
    agent_id: int
    agent_type: AgentType
    x: float
    y: float
    z: float = 0.0
    length: float = 0.0
    width: float = 0.0
    height: float = 0.0
    heading: float = 0.0

    def __post_init__(self):
        if self.frame_id < 0:
            raise ValueError(f"negative frame id {self.frame_id}")
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite position for agent {self.agent_id} at frame {self.frame_id}")

    def to_line(self) -> str:
        return (f"{self.frame_id} {self.agent_id} {self.agent_type.code} "
                f"{self.x!r} {self.y!r} {self.z!r} {self.length!r} {self.width!r} "
                f"{self.height!r} {self.heading!r}")


def _parse_int(token: str, lineno: int, what: str) -> int:
    try:
        value = float(token)
    except ValueError:
        raise ParseError(lineno, f"{what} {token!r} is not numeric") from None
    if not value.is_integer():
        raise ParseError(lineno, f"{what} {token!r} is not an integer")
    return int(value)


def parse_records(stream: Iterable[str]) -> list[TrajectoryRecord]:
    """Parse record lines; blank lines are skipped, anything malformed raises."""
    records = []
    for lineno, line in enumerate(stream, start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 10:
            raise ParseError(lineno, f"expected 10 fields, found {len(fields)}")
        frame = _parse_int(fields[0], lineno, "frame id")
        agent = _parse_int(fields[1], lineno, "agent id")
        code = _parse_int(fields[2], lineno, "type code")
        try:
            values = [float(tok) for tok in fields[3:]]
        except ValueError:
            raise ParseError(lineno, "non-numeric field") from None
        try:
            records.append(TrajectoryRecord(frame, agent, AgentType.from_code(code), *values))
        except ValueError as exc:
            raise ParseError(lineno, str(exc)) from None
    return records


def write_records(records: Iterable[TrajectoryRecord], sink: TextIO) -> None:
    for rec in records:
        sink.write(rec.to_line() + "\n")


@dataclass(frozen=True, eq=False)
class SceneWindow:
    """Fixed-shape bundle for one observation + prediction window.

    ``positions`` is ``[T, N, 2]`` with ``T = t_his + t_pred``; slots where
    ``mask`` is false hold exactly 0.0.  ``anchor`` is the translation that
    was subtracted from every valid position (zero for raw windows).
    """

    positions: np.ndarray
    mask: np.ndarray
    agent_types: tuple[AgentType, ...]
    agent_ids: np.ndarray
    frame_ids: np.ndarray
    t_his: int
    anchor: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        T, N = self.mask.shape
        assert self.positions.shape == (T, N, 2), "positions/mask shape mismatch"
        assert 1 <= self.t_his < T, "t_his must leave at least one future frame"
        assert len(self.agent_types) == N and self.agent_ids.shape == (N,)
        assert self.frame_ids.shape == (T,)
        assert self.anchor.shape == (2,)
        assert not self.positions[~self.mask].any(), "masked slots must hold 0.0"

    @property
    def t_pred(self) -> int:
        return self.mask.shape[0] - self.t_his

    @property
    def n_agents(self) -> int:
        return self.mask.shape[1]

    @property
    def predicted(self) -> np.ndarray:
        """Agents scored and predicted: those valid at the anchor frame."""
        return self.mask[self.t_his - 1]

    @property
    def categories(self) -> tuple[str, ...]:
        return tuple(t.category for t in self.agent_types)

    @property
    def history(self) -> np.ndarray:
        return self.positions[: self.t_his]

    @property
    def future(self) -> np.ndarray:
        return self.positions[self.t_his:]

    def global_positions(self) -> np.ndarray:
        return np.where(self.mask[..., None], self.positions + self.anchor, 0.0)


def _select_agents(ids: list[int], anchor_pos: dict[int, np.ndarray], n_max: int) -> list[int]:
    if len(ids) <= n_max:
        return sorted(ids)
    centroid = np.mean([anchor_pos[a] for a in ids if a in anchor_pos], axis=0)

    def key(agent):
        p = anchor_pos.get(agent)
        dist = math.inf if p is None else float(np.hypot(*(p - centroid)))
        return (dist, agent)

    return sorted(sorted(ids, key=key)[:n_max])


def build_windows(records: Sequence[TrajectoryRecord], t_his: int = 6, t_pred: int = 6,
                  stride: int = 1, n_max: int = 32) -> list[SceneWindow]:
    """Slide a ``t_his + t_pred`` frame window over one sequence file.

    Agents observed anywhere in the history frames are kept; those missing
    at the anchor frame stay as context but are not predicted.  Windows
    spanning a gap in frame ids are skipped.
    """
    if stride < 1 or t_his < 1 or t_pred < 1 or n_max < 1:
        raise ValueError("t_his, t_pred, stride and n_max must all be positive")
    by_frame: dict[int, dict[int, TrajectoryRecord]] = {}
    for rec in records:
        slot = by_frame.setdefault(rec.frame_id, {})
        if rec.agent_id in slot:
            raise ValueError(f"agent {rec.agent_id} appears twice in frame {rec.frame_id}")
        slot[rec.agent_id] = rec
    frames = sorted(by_frame)
    length = t_his + t_pred
    windows = []
    for start in range(0, len(frames) - length + 1, stride):
        span = frames[start:start + length]
        if span[-1] - span[0] != length - 1:
            continue
        anchor_frame = by_frame[span[t_his - 1]]
        observed = sorted({a for f in span[:t_his] for a in by_frame[f]})
        anchor_pos = {a: np.array([r.x, r.y]) for a, r in anchor_frame.items()}
        agents = _select_agents(observed, anchor_pos, n_max)
        if not any(a in anchor_frame for a in agents):
            continue
        N = len(agents)
        positions = np.zeros((length, N, 2))
        mask = np.zeros((length, N), dtype=bool)
        types: list[AgentType] = [AgentType.OTHER] * N
        for t, f in enumerate(span):
            frame = by_frame[f]
            for n, a in enumerate(agents):
                rec = frame.get(a)
                if rec is not None:
                    positions[t, n] = rec.x, rec.y
                    mask[t, n] = True
                    types[n] = rec.agent_type
        windows.append(SceneWindow(positions, mask, tuple(types), np.array(agents, dtype=np.int64),
                                   np.array(span, dtype=np.int64), t_his))
    return windows


def normalize_window(window: SceneWindow) -> SceneWindow:
    """Translate so the centroid of agents valid at the anchor frame sits at the origin."""
    valid = window.mask[window.t_his - 1]
    if not valid.any():
        raise EmptyWindowError("no valid agents at the anchor frame")
    glob = window.global_positions()
    anchor = glob[window.t_his - 1][valid].mean(axis=0)
    positions = np.where(window.mask[..., None], glob - anchor, 0.0)
    return replace(window, positions=positions, anchor=anchor)


def rotate_window(window: SceneWindow, angle: float, mirror: bool = False) -> SceneWindow:
    """Rotate positions about the frame origin, optionally mirroring y first.

    Masked slots stay zero and the anchor is untouched, so a normalized
    window stays normalized.
    """
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    if mirror:
        rot = rot @ np.diag([1.0, -1.0])
    return replace(window, positions=window.positions @ rot.T)


def denormalize(window: SceneWindow, positions: np.ndarray) -> np.ndarray:
    """Map window-frame positions back to global coordinates."""
    return np.asarray(positions) + window.anchor


# -- synthetic scenes ----------------------------------------------------------

MOTION_KINDS = ("constant_velocity", "constant_turn", "approach_yield")

_SIZES = {
    "vehicle": (4.5, 1.8, 1.5),
    "pedestrian": (0.5, 0.5, 1.7),
    "bike": (1.8, 0.6, 1.6),
    "other": (1.0, 1.0, 1.0),
}


@dataclass(frozen=True)
class ScenarioSpec:
    """Recipe for a seeded synthetic scene.

    ``agent_types`` is cycled over agents; ``motion_kinds`` is sampled per
    agent (an approach-yield pick consumes two agents).  Turn rates are in
    rad/s, speeds in m/s, positions in metres.
    """

    n_agents: int = 4
    motion_kinds: tuple[str, ...] = ("constant_velocity",)
    speed_range: tuple[float, float] = (0.5, 2.0)
    turn_rate_range: tuple[float, float] = (-0.3, 0.3)
    noise_sigma: float = 0.0
    duration: int = 12
    seed: int = 0
    start_box: float = 10.0
    heading_range: tuple[float, float] = (-math.pi, math.pi)
    agent_types: tuple[AgentType, ...] = (AgentType.SMALL_VEHICLE, AgentType.PEDESTRIAN,
                                          AgentType.BICYCLIST)
    t_his: int = 6
    t_pred: int = 6
    first_frame: int = 0
    first_agent_id: int = 1

    def __post_init__(self):
        if self.n_agents < 1:
            raise ValueError("a scenario needs at least one agent")
        if self.duration < self.t_his + self.t_pred:
            raise ValueError(f"duration {self.duration} shorter than t_his + t_pred")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        unknown = set(self.motion_kinds) - set(MOTION_KINDS)
        if unknown or not self.motion_kinds:
            raise ValueError(f"unknown motion kinds {sorted(unknown)}")
        lo, hi = self.speed_range
        if not 0 <= lo <= hi:
            raise ValueError("speed_range must satisfy 0 <= min <= max")
        if not self.agent_types:
            raise ValueError("agent_types must not be empty")


def constant_velocity_track(start, velocity, frames: int) -> np.ndarray:
    k = np.arange(frames)[:, None] * FRAME_DT
    return np.asarray(start, dtype=np.float64) + k * np.asarray(velocity, dtype=np.float64)


def constant_turn_track(start, speed: float, heading: float, turn_rate: float, frames: int) -> np.ndarray:
    t = np.arange(frames) * FRAME_DT
    if abs(turn_rate) < 1e-12:
        return constant_velocity_track(start, (speed * math.cos(heading), speed * math.sin(heading)), frames)
    radius = speed / turn_rate
    theta = heading + turn_rate * t
    x = start[0] + radius * (np.sin(theta) - math.sin(heading))
    y = start[1] - radius * (np.cos(theta) - math.cos(heading))
    return np.stack([x, y], axis=1)


def approach_yield_pair(conflict, speed: float, heading: float, frames: int, gap: float = 4.0,
                        brake_time: float = 2.0):
    """Two agents heading for the same point; the second stops short until the first clears it.

    The priority agent crosses the conflict point at mid-duration.  The
    yielding agent approaches at right angles, brakes uniformly to a stop
    ``gap`` metres short of the point half a second before the crossing,
    waits, and resumes at full speed once the other agent is ``gap`` metres
    past.
    """
    conflict = np.asarray(conflict, dtype=np.float64)
    t = np.arange(frames) * FRAME_DT
    t_cross = t[frames // 2]
    d1 = np.array([math.cos(heading), math.sin(heading)])
    first = conflict + np.outer(speed * (t - t_cross), d1)

    d2 = np.array([-d1[1], d1[0]])
    t_stop = max(t_cross - 0.5, 0.0)
    brake = min(brake_time, t_stop)
    t_brake = t_stop - brake
    approach = speed * t_brake + 0.5 * speed * brake
    resume = t_cross + (gap / speed if speed > 0 else 0.0)
    travelled = np.where(t <= t_brake, speed * t, 0.0)
    braking = (t > t_brake) & (t <= t_stop)
    tb = t - t_brake
    travelled = np.where(braking, speed * t_brake + speed * tb - 0.5 * (speed / max(brake, 1e-9)) * tb * tb,
                         travelled)
    travelled = np.where((t > t_stop) & (t <= resume), approach, travelled)
    travelled = np.where(t > resume, approach + speed * (t - resume), travelled)
    second = conflict - d2 * (gap + approach) + np.outer(travelled, d2)
    return first, second


def _heading(track: np.ndarray) -> np.ndarray:
    d = np.diff(track, axis=0)
    h = np.arctan2(d[:, 1], d[:, 0])
    return np.concatenate([h, h[-1:]]) if len(h) else np.zeros(len(track))


def generate_synthetic(spec: ScenarioSpec) -> list[TrajectoryRecord]:
    """Seeded synthetic records at 2 fps, sorted by (frame, agent)."""
    rng = np.random.default_rng(spec.seed)
    tracks: list[np.ndarray] = []
    while len(tracks) < spec.n_agents:
        kind = spec.motion_kinds[rng.integers(len(spec.motion_kinds))]
        start = rng.uniform(-spec.start_box, spec.start_box, size=2)
        speed = rng.uniform(*spec.speed_range)
        heading = rng.uniform(*spec.heading_range)
        if kind == "constant_velocity":
            vel = (speed * math.cos(heading), speed * math.sin(heading))
            tracks.append(constant_velocity_track(start, vel, spec.duration))
        elif kind == "constant_turn":
            rate = rng.uniform(*spec.turn_rate_range)
            tracks.append(constant_turn_track(start, speed, heading, rate, spec.duration))
        elif spec.n_agents - len(tracks) >= 2:
            tracks.extend(approach_yield_pair(start, speed, heading, spec.duration))
        else:
            vel = (speed * math.cos(heading), speed * math.sin(heading))
            tracks.append(constant_velocity_track(start, vel, spec.duration))
    records = []
    for n, track in enumerate(tracks):
        if spec.noise_sigma > 0:
            track = track + rng.normal(0.0, spec.noise_sigma, size=track.shape)
        agent_type = spec.agent_types[n % len(spec.agent_types)]
        length, width, height = _SIZES[agent_type.category]
        headings = _heading(track)
        for k in range(spec.duration):
            records.append(TrajectoryRecord(
                spec.first_frame + k, spec.first_agent_id + n, agent_type,
                float(track[k, 0]), float(track[k, 1]), 0.0, length, width, height, float(headings[k])))
    records.sort(key=lambda r: (r.frame_id, r.agent_id))
    return records


# -- prediction output ----------------------------------------------------------


def write_predictions(windows: Sequence[SceneWindow], predictions: Sequence, sink: TextIO) -> None:
    """Emit ``frame_id agent_id x y`` lines in global coordinates.

    ``predictions[i]`` is a ``[t_pred, N, 2]`` array (or anything with a
    ``positions`` attribute) in the normalized frame of ``windows[i]``.  Only
    predicted agents are written; lines are sorted by (frame, agent).
    """
    if len(windows) != len(predictions):
        raise ValueError(f"{len(windows)} windows but {len(predictions)} predictions")
    rows = []
    for w, pred in zip(windows, predictions):
        pos = getattr(pred, "positions", pred)
        pos = np.asarray(getattr(pos, "data", pos))
        if pos.shape != (w.t_pred, w.n_agents, 2):
            raise ValueError(f"prediction shape {pos.shape} does not match window {(w.t_pred, w.n_agents, 2)}")
        glob = denormalize(w, pos)
        for k in range(w.t_pred):
            frame = int(w.frame_ids[w.t_his + k])
            for n in np.flatnonzero(w.predicted):
                rows.append((frame, int(w.agent_ids[n]), glob[k, n, 0], glob[k, n, 1]))
    rows.sort(key=lambda r: (r[0], r[1]))
    for frame, agent, x, y in rows:
        sink.write(f"{frame} {agent} {x:.10f} {y:.10f}\n")


def parse_predictions(stream: Iterable[str]) -> dict[tuple[int, int], tuple[float, float]]:
    """Read ``frame_id agent_id x y`` lines into a ``{(frame, agent): (x, y)}`` map."""
    out = {}
    for lineno, line in enumerate(stream, start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 4:
            raise ParseError(lineno, f"expected 4 fields, found {len(fields)}")
        frame = _parse_int(fields[0], lineno, "frame id")
        agent = _parse_int(fields[1], lineno, "agent id")
        try:
            out[frame, agent] = (float(fields[2]), float(fields[3]))
        except ValueError:
            raise ParseError(lineno, "non-numeric coordinate") from None
    return out

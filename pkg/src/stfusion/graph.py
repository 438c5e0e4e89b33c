"""Per-frame proximity graphs and their integration into one spatiotemporal graph.

Nodes of the integrated graph are ``(t, n)`` pairs flattened time-major,
``index = t * N + n``, so for four agents A-D over three frames the order
is A0, B0, C0, D0, A1, ... D2.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TextIO

import numpy as np


@dataclass(frozen=True)
class GraphConfig:
    d_close: float = 25.0
    t_his: int = 6

    def __post_init__(self):
        if not self.d_close > 0:
            raise ValueError(f"d_close must be positive, got {self.d_close}")
        if self.t_his < 1:
            raise ValueError("t_his must be positive")


@dataclass(frozen=True, eq=False)
class IntegratedGraph:
    adjacency: np.ndarray   # [T*N, T*N] bool
    spatial: np.ndarray     # [T, N, N] bool
    valid: np.ndarray       # [T, N] bool

    @property
    def n_frames(self) -> int:
        return self.valid.shape[0]

    @property
    def n_agents(self) -> int:
        return self.valid.shape[1]

    @property
    def n_nodes(self) -> int:
        return self.valid.size

    def node_index(self, t: int, n: int) -> int:
        return t * self.n_agents + n


def spatial_adjacency(positions: np.ndarray, valid: np.ndarray, d_close: float) -> np.ndarray:
    """Edge between two distinct valid agents closer than ``d_close`` (strict)."""
    positions = np.asarray(positions, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.sqrt((diff * diff).sum(-1))
    adj = (dist < d_close) & valid[:, None] & valid[None, :]
    np.fill_diagonal(adj, False)
    return adj


def integrate(spatial: np.ndarray, valid: np.ndarray) -> IntegratedGraph:
    """Stack per-frame graphs on the block diagonal and link adjacent frames.

    Every valid node is joined to every valid node (itself included) one
    frame earlier and one frame later; frames further apart stay unlinked.
    """
    spatial = np.asarray(spatial, dtype=bool)
    valid = np.asarray(valid, dtype=bool)
    T, N = valid.shape
    if spatial.shape != (T, N, N):
        raise ValueError(f"spatial adjacency shape {spatial.shape} does not match validity {valid.shape}")
    if (spatial != np.swapaxes(spatial, 1, 2)).any():
        raise ValueError("spatial adjacency must be symmetric")
    if spatial[:, np.arange(N), np.arange(N)].any():
        raise ValueError("spatial adjacency must have a zero diagonal")
    spatial = spatial & valid[:, :, None] & valid[:, None, :]
    adj = np.zeros((T * N, T * N), dtype=bool)
    for t in range(T):
        adj[t * N:(t + 1) * N, t * N:(t + 1) * N] = spatial[t]
        if t + 1 < T:
            link = valid[t][:, None] & valid[t + 1][None, :]
            adj[t * N:(t + 1) * N, (t + 1) * N:(t + 2) * N] = link
            adj[(t + 1) * N:(t + 2) * N, t * N:(t + 1) * N] = link.T
    return IntegratedGraph(adj, spatial, valid.copy())


def build_graph(positions: np.ndarray, valid: np.ndarray, d_close: float) -> IntegratedGraph:
    """Integrated graph straight from ``[T, N, 2]`` positions and a ``[T, N]`` mask."""
    spatial = np.stack([spatial_adjacency(positions[t], valid[t], d_close) for t in range(valid.shape[0])])
    return integrate(spatial, valid)


def neighborhood(graph: IntegratedGraph, t: int, n: int) -> list[int]:
    """Flat indices adjacent to node ``(t, n)``, ascending."""
    if not graph.valid[t, n]:
        raise ValueError(f"node ({t}, {n}) is not valid")
    return np.flatnonzero(graph.adjacency[graph.node_index(t, n)]).tolist()


def node_label(graph: IntegratedGraph, index: int) -> tuple[int, int]:
    return divmod(index, graph.n_agents)


def dump_graph(graph: IntegratedGraph, sink: TextIO) -> None:
    """Write ``T N`` then one row of 0/1 characters per node."""
    sink.write(f"{graph.n_frames} {graph.n_agents}\n")
    for row in graph.adjacency:
        sink.write("".join("1" if v else "0" for v in row) + "\n")


def load_graph_dump(stream: TextIO) -> tuple[int, int, np.ndarray]:
    header = stream.readline().split()
    T, N = int(header[0]), int(header[1])
    rows = [line.strip() for line in stream if line.strip()]
    adj = np.array([[c == "1" for c in row] for row in rows], dtype=bool)
    if adj.shape != (T * N, T * N):
        raise ValueError(f"dump body {adj.shape} does not match header {T} {N}")
    return T, N, adj

"""
The integrated spatiotemporal graph
===================================

Three agents observed over four frames.  Agents closer than ``d_close`` are
joined within a frame, and every node is joined to every valid node of
the previous and the next frame, itself included.  Node ``t * N + n`` is agent ``n`` at
frame ``t``.
"""

import sys

import numpy as np

from stfusion.graph import build_graph, dump_graph, neighborhood, node_label

# agent 2 walks away from the other two and is missing at frame 2
positions = np.array([
    [[0.0, 0.0], [3.0, 0.0], [6.0, 0.0]],
    [[0.5, 0.0], [3.5, 0.0], [12.0, 0.0]],
    [[1.0, 0.0], [4.0, 0.0], [0.0, 0.0]],
    [[1.5, 0.0], [4.5, 0.0], [30.0, 0.0]],
])
valid = np.ones((4, 3), dtype=bool)
valid[2, 2] = False

graph = build_graph(positions, valid, d_close=5.0)
print("nodes:", graph.n_nodes)
print("spatial edges per frame:", graph.spatial.sum(axis=(1, 2)) // 2)

# the full 12 x 12 adjacency in the graph-dump text format
dump_graph(graph, sys.stdout)

# neighbours of agent 1 at frame 1, as (frame, agent) pairs
print("neighbours of (1, 1):", [node_label(graph, j) for j in neighborhood(graph, 1, 1)])

# the hidden node has no edges at all
print("degree of (2, 2):", graph.adjacency[graph.node_index(2, 2)].sum())

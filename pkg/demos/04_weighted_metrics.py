"""
Category-weighted metrics
=========================

ADE and FDE are computed per agent category and then combined with fixed
weights, 0.20 for vehicles, 0.58 for pedestrians and 0.22 for cyclists.
"""

import numpy as np

from stfusion.data import AgentType, SceneWindow
from stfusion.metrics import WEIGHTS, evaluate, weighted_summary

print("weights:", WEIGHTS)

# per-category ADE values combine linearly
print("WSADE of (1.0, 2.0, 3.0):", weighted_summary({"vehicle": 1.0, "pedestrian": 2.0, "bike": 3.0}))

# one window, three agents, one per category; predictions are off by (3, 4)
T_his, T_pred = 6, 6
types = (AgentType.SMALL_VEHICLE, AgentType.PEDESTRIAN, AgentType.BICYCLIST)
rng = np.random.default_rng(0)
positions = np.cumsum(rng.normal(size=(T_his + T_pred, 3, 2)), axis=0)
window = SceneWindow(positions, np.ones((T_his + T_pred, 3), dtype=bool), types, np.arange(3),
                     np.arange(T_his + T_pred), T_his)
report = evaluate([window.future + np.array([3.0, 4.0])], [window])
print(report.to_csv())

# a category with no agents is left out of the report instead of scored as zero
only_walkers = SceneWindow(positions[:, 1:2], np.ones((T_his + T_pred, 1), dtype=bool),
                           (AgentType.PEDESTRIAN,), np.arange(1), np.arange(T_his + T_pred), T_his)
print(evaluate([only_walkers.future], [only_walkers]).to_csv())

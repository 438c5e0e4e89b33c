"""
Gradients from the tape
=======================

Every layer runs on a small reverse-mode autodiff over numpy arrays.  Here a
tiny model is built on one synthetic window and its analytic gradients are
compared with central finite differences.
"""

import numpy as np

from stfusion import tensor as tt
from stfusion.data import ScenarioSpec, build_windows, generate_synthetic, normalize_window
from stfusion.model import ModelConfig, forward, init_params
from stfusion.training import loss

spec = ScenarioSpec(n_agents=3, motion_kinds=("constant_velocity", "constant_turn"), seed=4)
window = normalize_window(build_windows(generate_synthetic(spec))[0])

cfg = ModelConfig(embed_dim=4, gat_dim=3, stgcn_channels=4, gru_hidden=5)
params = init_params(cfg, seed=0)
rng = np.random.default_rng(0)
for p in params.values():
    # move off the zero-bias start, where ReLU sits on its kink
    p.data += 0.3 * rng.normal(size=p.shape)

with tt.GradTape(params) as tape:
    value = loss(forward(window, params, cfg), window)
grads = tape.backward(value)
print(f"loss {value.item():.4f}")
for name in ("embed.w1", "gat0.a", "stgcn0.kernel", "enc.wh", "head.w"):
    print(f"{name:14s} |grad| = {np.linalg.norm(grads[name]):.4e}")

worst = tt.fd_check(lambda: loss(forward(window, params, cfg), window), params)
print(f"worst relative error against finite differences: {worst:.2e}")

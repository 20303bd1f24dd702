"""Reconstruct a gaze label from its source neighbours.

Picks neighbours inside the mu-box around a target label, solves for the
sum-to-one weights and shows how well the weighted neighbours reproduce the
target, for a few regularisation strengths.
"""
import numpy as np

from epcgaze.llr import NeighborConfig, local_covariance, select_neighbors, solve_weights

rng = np.random.default_rng(0)
source = np.column_stack([rng.uniform(-0.5, 0.5, 64), rng.uniform(-0.4, 0.2, 64)])
target = np.array([0.12, -0.05])

cfg = NeighborConfig(mu=0.15, k=4)
nb = select_neighbors(target, source, cfg, rng)
pts = source[nb.neighbor_indices]
print("neighbours (yaw, pitch):")
print(np.round(pts, 3))

S = local_covariance(target, pts)
for lam in (None, 1e-4, 1e-2, 1.0):
    c = NeighborConfig(mu=0.15, k=4, lambda_reg=lam)
    w = solve_weights(S, c)
    resid = np.linalg.norm(target - w @ pts)
    name = "relative" if lam is None else f"{lam:g}"
    print(f"lambda={name:>8}  weights={np.round(w, 3)}  sum={w.sum():.12f}  residual={resid:.2e}")
# large lambda pulls the weights toward uniform and the residual grows

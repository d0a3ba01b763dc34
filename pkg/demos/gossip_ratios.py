"""Estimate the global importance ratio by gossiping log local ratios on two topologies."""
import numpy as np

from dectdc import build_fully_connected, build_ring, estimate_global_ratios, min_rounds
from dectdc import ratio_error_bound

rng = np.random.default_rng(0)
M = 10
loc = rng.uniform(0.8, 1.25, size=M)
rho = float(np.prod(loc))
rho_min, rho_max = 0.8 ** M, 1.25 ** M

for name, v in [("fully connected", build_fully_connected(M)), ("ring", build_ring(M))]:
    L = min_rounds(M, v.sigma2)
    print(f"{name}: sigma2={v.sigma2:.5f}, min_rounds={L}")
    for rounds in (1, L // 2, L, 2 * L):
        err = np.sum((estimate_global_ratios(loc, v, rounds) - rho) ** 2)
        bound = ratio_error_bound(M, v.sigma2, rounds, rho_min, rho_max)
        print(f"  L={rounds:4d}  squared error {err:.3e}  bound {bound:.3e}")

"""Importance sampling ratios and their gossip-based global estimate."""
from __future__ import annotations

from dataclasses import dataclass
from math import ceil, log

import numpy as np

from .env import PolicySet
from .errors import SupportViolation
from .network import CommMatrix


@dataclass(frozen=True, eq=False)
class RatioBundle:
    local: np.ndarray
    exact_global: float
    estimates: np.ndarray | None
    rho_min: float
    rho_max: float


def local_ratio(policies: PolicySet, agent: int, s: int, a: int) -> float:
    pb = policies.behavior[agent][s, a]
    if pb <= 0:
        raise SupportViolation(f"agent {agent}: behavior probability of action {a} in state {s} is 0")
    return float(policies.target[agent][s, a] / pb)


def ratio_table(policies: PolicySet, agent: int) -> np.ndarray:
    """All local ratios of one agent, shape ``(S, |A_m|)``."""
    pb = policies.behavior[agent]
    if np.any(pb <= 0):
        raise SupportViolation(f"agent {agent}: behavior policy lacks full support")
    return policies.target[agent] / pb


def local_ratios(policies: PolicySet, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Local ratios for a run of samples, shape ``(M, T)``."""
    return np.stack([ratio_table(policies, m)[states, actions[:, m]]
                     for m in range(policies.n_agents)])


def global_ratio_exact(locals_: np.ndarray) -> float | np.ndarray:
    """Product of local ratios over the agent axis (axis 0)."""
    locals_ = np.asarray(locals_, dtype=float)
    if np.any(locals_ <= 0):
        raise ValueError("local ratios must be positive")
    return np.prod(locals_, axis=0)


def estimate_global_ratios(locals_: np.ndarray, v: CommMatrix, rounds: int) -> np.ndarray:
    """Per-agent estimates ``exp(M * (V^L log rho)_m)``.

    ``locals_`` may be a length-M vector or an ``(M, N)`` matrix holding a
    whole mini-batch; the gossip acts on the first axis either way.
    """
    x = np.log(np.asarray(locals_, dtype=float))
    if rounds < 1:
        raise ValueError("need at least one gossip round")
    if x.shape[0] != v.m:
        raise ValueError(f"expected {v.m} agents, got {x.shape[0]}")
    for _ in range(rounds):
        x = v.weights @ x
    return np.exp(v.m * x)


def log_gossip_path(locals_: np.ndarray, v: CommMatrix, rounds: int) -> np.ndarray:
    """Log-ratio iterates for rounds ``0..rounds``, shape ``(rounds + 1, M, ...)``."""
    x = np.log(np.asarray(locals_, dtype=float))
    out = [x]
    for _ in range(rounds):
        x = v.weights @ x
        out.append(x)
    return np.stack(out)


def min_rounds(m: int, sigma2: float) -> int:
    """Smallest ``L`` with ``L >= 3 ln M / (2 ln(1/sigma2))``, at least 1."""
    if not 0.0 < sigma2 < 1.0:
        raise ValueError("sigma2 must lie in (0, 1)")
    if m < 1:
        raise ValueError("m must be at least 1")
    if m == 1:
        return 1
    return max(1, ceil(3.0 * log(m) / (2.0 * log(1.0 / sigma2))))


def ratio_error_bound(m: int, sigma2: float, rounds: int, rho_min: float, rho_max: float) -> float:
    """Upper bound on ``sum_m (rho_hat^(m) - rho)^2`` after ``rounds`` gossip rounds."""
    if rho_min <= 0 or rho_max < rho_min:
        raise ValueError("need 0 < rho_min <= rho_max")
    return float(m ** 3 * sigma2 ** (2 * rounds) * (rho_max ** 2 / rho_min)
                 * log(rho_max / rho_min) ** 2)


def ratio_extrema(policies: PolicySet) -> tuple[float, float]:
    """Exact ``(rho_min, rho_max)`` over local and global ratio tables.

    Agents act independently given the state, so the global extremum in a
    state is the product of the per-agent extrema in that state.
    """
    tables = policies.ratio_tables()
    lo_local = min(t.min() for t in tables)
    hi_local = max(t.max() for t in tables)
    lo_global = np.prod([t.min(axis=1) for t in tables], axis=0).min()
    hi_global = np.prod([t.max(axis=1) for t in tables], axis=0).max()
    return float(min(lo_local, lo_global)), float(max(hi_local, hi_global))

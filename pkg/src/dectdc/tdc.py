"""TDC sample statistics, expected matrices and the centralized recursion.

For a transition ``(s, a, s', R)`` with importance ratio ``rho`` and
features ``phi``::

    A = rho * phi(s) (gamma phi(s') - phi(s))^T
    B = -gamma * rho * phi(s') phi(s)^T
    C = -phi(s) phi(s)^T
    b^(m) = rho * R^(m) * phi(s)

TDC then iterates ``theta += alpha (A theta + b + B w)`` and
``w += beta (A theta + b + C w)``.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from math import log
from pathlib import Path
from typing import Sequence

import numpy as np

from .env import EnvBundle, FeatureMap, MultiAgentMdp, PolicySet, Transition, TransitionBatch
from .env import TrajectorySampler, sample_iid
from .errors import AssumptionViolation

ENUM_GUARD = 10_000_000
COND_WARN = 1e10


@dataclass(frozen=True, eq=False)
class SampleStats:
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    b_vecs: np.ndarray  # (M, d)


@dataclass(frozen=True, eq=False)
class BatchStats:
    """Mini-batch means of the per-sample statistics."""

    a_bar: np.ndarray
    b_bar: np.ndarray
    c_bar: np.ndarray
    b_vecs: np.ndarray  # (M, d), agent m's mean rho R^(m) phi(s)
    n: int

    @property
    def b_mean(self) -> np.ndarray:
        """Reward vector averaged over agents."""
        return self.b_vecs.mean(axis=0)


@dataclass(frozen=True, eq=False)
class FixedPoint:
    """Expected TDC matrices under the stationary behavior distribution."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    b_mean: np.ndarray
    b_per_agent: np.ndarray
    theta_star: np.ndarray
    lambda1: float
    lambda2: float
    cond_a: float
    cond_c: float

    # duck-type BatchStats so exact matrices can drive the same updates
    @property
    def a_bar(self):
        return self.a

    @property
    def b_bar(self):
        return self.b

    @property
    def c_bar(self):
        return self.c

    @property
    def b_vecs(self):
        return self.b_per_agent

    def w_star(self, theta_bar: np.ndarray) -> np.ndarray:
        """Tracking target ``-C^{-1}(A theta + b)`` for the auxiliary iterate."""
        return -np.linalg.solve(self.c, self.a @ theta_bar + self.b_mean)


@dataclass(frozen=True)
class BoundSet:
    omega_a: float
    omega_b: float
    omega_b_vec: float
    d_a: float
    d_b: float
    d_b_vec: float
    rho_min: float
    rho_max: float
    r_max: float
    gamma: float


def sample_stats(tr: Transition, features: FeatureMap, rho: float, gamma: float) -> SampleStats:
    if rho <= 0:
        raise ValueError("rho must be positive")
    if max(tr.s, tr.s_next) >= features.n_states:
        raise ValueError("transition state outside the feature table")
    phi = features.table[:, tr.s]
    phi_n = features.table[:, tr.s_next]
    a = rho * np.outer(phi, gamma * phi_n - phi)
    b = -gamma * rho * np.outer(phi_n, phi)
    c = -np.outer(phi, phi)
    b_vecs = rho * np.asarray(tr.rewards)[:, None] * phi[None, :]
    return SampleStats(a, b, c, b_vecs)


def batch_average(stats: Sequence[SampleStats]) -> BatchStats:
    if not stats:
        raise ValueError("cannot average an empty batch")
    n = len(stats)
    return BatchStats(
        sum(s.a for s in stats) / n,
        sum(s.b for s in stats) / n,
        sum(s.c for s in stats) / n,
        sum(s.b_vecs for s in stats) / n,
        n,
    )


def batch_stats(batch: TransitionBatch, features: FeatureMap, rho: np.ndarray,
                gamma: float) -> BatchStats:
    """Vectorized :func:`batch_average` over a transition batch with ratios ``rho``."""
    phi = features.by_state[batch.states]
    phi_n = features.by_state[batch.next_states]
    n = len(batch)
    a = np.einsum("n,ni,nj->ij", rho, phi, gamma * phi_n - phi) / n
    b = -gamma * np.einsum("n,ni,nj->ij", rho, phi_n, phi) / n
    c = -phi.T @ phi / n
    b_vecs = np.einsum("n,nm,ni->mi", rho, batch.rewards, phi) / n
    return BatchStats(a, b, c, b_vecs, n)


def agent_batch_stats(batch: TransitionBatch, features: FeatureMap, rho_hat: np.ndarray,
                      gamma: float) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-agent batch means when agent m uses its own ratio estimates ``rho_hat[m]``.

    Returns stacked ``(A_m (M,d,d), B_m (M,d,d), C (d,d), b_m (M,d))``; ``b_m``
    holds each agent's own reward term only.
    """
    phi = features.by_state[batch.states]
    phi_n = features.by_state[batch.next_states]
    n = len(batch)
    a = np.einsum("mn,ni,nj->mij", rho_hat, phi, gamma * phi_n - phi) / n
    b = -gamma * np.einsum("mn,ni,nj->mij", rho_hat, phi_n, phi) / n
    c = -phi.T @ phi / n
    b_vecs = np.einsum("mn,nm,ni->mi", rho_hat, batch.rewards, phi) / n
    return a, b, c, b_vecs


def split_agent_stats(a, b, c, b_vecs) -> list[BatchStats]:
    """Unstack :func:`agent_batch_stats` output into one BatchStats per agent.

    Only row ``m`` of agent m's ``b_vecs`` is meaningful; other rows are zero.
    """
    out = []
    for m in range(a.shape[0]):
        bv = np.zeros_like(b_vecs)
        bv[m] = b_vecs[m]
        out.append(BatchStats(a[m], b[m], c, bv, 0))
    return out


def expected_stats(mdp: MultiAgentMdp, policies: PolicySet, features: FeatureMap,
                   mu: np.ndarray) -> FixedPoint:
    """Exact expected matrices by enumerating ``(s, a, s')`` and solving for ``theta*``."""
    S, J = mdp.n_states, mdp.n_joint
    if S * J * S > ENUM_GUARD:
        raise ValueError(f"{S * J * S} (s, a, s') triples exceeds the enumeration guard")
    pb = policies.joint_behavior()
    rho = policies.joint_target() / pb
    w = mu[:, None, None] * pb[:, :, None] * mdp.kernel  # (S, J, S)
    wr = w * rho[:, :, None]
    q = wr.sum(axis=1)  # (S, S)
    F = features.by_state
    g = mdp.gamma
    a = g * F.T @ q @ F - F.T @ (q.sum(axis=1)[:, None] * F)
    b = -g * F.T @ q.T @ F
    c = -F.T @ (mu[:, None] * F)
    b_per_agent = np.einsum("sjt,msjt->ms", wr, mdp.rewards) @ F
    return solve_fixed_point(a, b, c, b_per_agent)


def solve_fixed_point(a, b, c, b_per_agent) -> FixedPoint:
    b_mean = b_per_agent.mean(axis=0)
    cond_a, cond_c = float(np.linalg.cond(a)), float(np.linalg.cond(c))
    if not np.isfinite(cond_a) or cond_a > 1e15:
        raise AssumptionViolation(f"A is singular (condition number {cond_a:.3g})")
    if not np.isfinite(cond_c) or cond_c > 1e15:
        raise AssumptionViolation(f"C is singular (condition number {cond_c:.3g})")
    if cond_a > COND_WARN:
        warnings.warn(f"A is ill-conditioned (condition number {cond_a:.3g})", stacklevel=2)
    theta_star = -np.linalg.solve(a, b_mean)
    lam2 = -float(np.linalg.eigvalsh((c + c.T) / 2).max())
    ev = np.linalg.eigvals(a.T @ np.linalg.solve(c, a))
    if np.max(np.abs(ev.imag)) > 1e-8:
        warnings.warn("A^T C^-1 A has eigenvalues with non-negligible imaginary parts",
                      stacklevel=2)
    lam1 = -float(ev.real.max())
    if lam1 <= 0 or lam2 <= 0:
        raise AssumptionViolation(f"lambda1={lam1:.3g}, lambda2={lam2:.3g} must be positive")
    return FixedPoint(a, b, c, b_mean, b_per_agent, theta_star, lam1, lam2, cond_a, cond_c)


def fixed_point_for(env: EnvBundle, mu: np.ndarray | None = None) -> FixedPoint:
    from .env import stationary_distribution

    if mu is None:
        mu = stationary_distribution(env.mdp, env.policies)
    return expected_stats(env.mdp, env.policies, env.features, mu)


def centralized_tdc_step(theta: np.ndarray, w: np.ndarray, stats, alpha: float,
                         beta: float) -> tuple[np.ndarray, np.ndarray]:
    """One TDC update driven by batch means (or exact expected matrices)."""
    delta = stats.a_bar @ theta + stats.b_vecs.mean(axis=0)
    return (theta + alpha * (delta + stats.b_bar @ w),
            w + beta * (delta + stats.c_bar @ w))


def compute_bounds(rho_min: float, rho_max: float, gamma: float, r_max: float) -> BoundSet:
    if not 0 < rho_min <= rho_max:
        raise ValueError("need 0 < rho_min <= rho_max")
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    spread = (rho_max ** 2 / rho_min) * log(rho_max / rho_min) ** 2
    return BoundSet(
        omega_a=rho_max * (1 + gamma),
        omega_b=rho_max * gamma,
        omega_b_vec=rho_max * r_max,
        d_a=(1 + gamma) ** 2 * spread,
        d_b=gamma ** 2 * spread,
        d_b_vec=r_max ** 2 * spread,
        rho_min=rho_min, rho_max=rho_max, r_max=r_max, gamma=gamma,
    )


def empirical_batch_deviation(env: EnvBundle, fp: FixedPoint, n: int, trials: int,
                              rng: np.random.Generator, mode: str = "markov",
                              mu: np.ndarray | None = None) -> tuple[float, float]:
    """Bias and mean squared deviation of the batch mean ``A_bar`` from ``A``.

    ``mode="markov"`` draws each trial as a fresh length-``n`` trajectory
    from a uniformly drawn start state; ``mode="iid"`` draws ``s ~ mu``
    independently per sample (requires ``mu``).

    Returns ``(||mean(A_bar) - A||_F, mean ||A_bar - A||_F^2)``.
    """
    from .ratios import global_ratio_exact, local_ratios

    if trials < 30:
        raise ValueError("use at least 30 trials")
    if mode not in ("markov", "iid"):
        raise ValueError(f"unknown sampling mode {mode!r}")
    if mode == "iid" and mu is None:
        raise ValueError("iid mode needs the stationary distribution")
    mdp, pol, feats = env.mdp, env.policies, env.features
    devs = np.empty((trials,) + fp.a.shape)
    for k in range(trials):
        if mode == "markov":
            s0 = int(rng.integers(mdp.n_states))
            batch = TrajectorySampler(mdp, pol, s0, rng).sample(n)
        else:
            batch = sample_iid(mdp, pol, mu, n, rng)
        rho = global_ratio_exact(local_ratios(pol, batch.states, batch.actions))
        devs[k] = batch_stats(batch, feats, rho, mdp.gamma).a_bar - fp.a
    bias = float(np.linalg.norm(devs.mean(axis=0)))
    msd = float(np.mean(np.sum(devs ** 2, axis=(1, 2))))
    return bias, msd


def save_fixed_point(fp: FixedPoint, path: str | Path) -> None:
    doc = {
        "format": "dectdc-fixed-point",
        "version": 1,
        "thetaStar": fp.theta_star.tolist(),
        "lambda1": fp.lambda1,
        "lambda2": fp.lambda2,
        "condA": fp.cond_a,
        "condC": fp.cond_c,
        "A": fp.a.tolist(),
        "B": fp.b.tolist(),
        "C": fp.c.tolist(),
        "bMean": fp.b_mean.tolist(),
        "bPerAgent": fp.b_per_agent.tolist(),
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_fixed_point(path: str | Path) -> FixedPoint:
    doc = json.loads(Path(path).read_text())
    arr = lambda k: np.array(doc[k], dtype=float)  # noqa: E731
    return FixedPoint(arr("A"), arr("B"), arr("C"), arr("bMean"), arr("bPerAgent"),
                      arr("thetaStar"), doc["lambda1"], doc["lambda2"], doc["condA"], doc["condC"])

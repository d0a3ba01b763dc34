"""Multi-agent MDP generation, simulation and stationary analysis.

All agents share one finite state space.  Each agent picks its own action,
and the joint action is encoded as a single mixed-radix index with agent 0
as the most significant digit.  Kernels are stored as ``(S, J, S)`` arrays
and rewards as ``(M, S, J, S)`` arrays, where ``J`` is the number of joint
actions.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ._rng import stream
from .errors import ConvergenceError, FeatureRankError, MixingFitError

ROW_TOL = 1e-12
BUNDLE_FORMAT = "dectdc-env-bundle"
BUNDLE_VERSION = 1


@dataclass(frozen=True, eq=False)
class MultiAgentMdp:
    """Finite multi-agent MDP with a shared state and per-agent rewards.

    Attributes
    ----------
    kernel : ndarray, shape (S, J, S)
        ``kernel[s, j, s']`` is the probability of moving to ``s'`` from
        ``s`` under joint action ``j``.
    rewards : ndarray, shape (M, S, J, S)
        Per-agent reward tables with entries in ``[0, r_max]``.
    """

    n_states: int
    n_agents: int
    actions_per_agent: tuple[int, ...]
    kernel: np.ndarray
    rewards: np.ndarray
    gamma: float
    r_max: float

    def __post_init__(self):
        S, M = self.n_states, self.n_agents
        if S < 1 or M < 1:
            raise ValueError("n_states and n_agents must be positive")
        if len(self.actions_per_agent) != M or min(self.actions_per_agent) < 1:
            raise ValueError("actions_per_agent needs one positive entry per agent")
        J = self.n_joint
        if self.kernel.shape != (S, J, S):
            raise ValueError(f"kernel shape {self.kernel.shape} != {(S, J, S)}")
        if self.rewards.shape != (M, S, J, S):
            raise ValueError(f"rewards shape {self.rewards.shape} != {(M, S, J, S)}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if np.any(self.kernel < 0):
            raise ValueError("kernel has negative entries")
        if np.max(np.abs(self.kernel.sum(axis=2) - 1.0)) > ROW_TOL:
            raise ValueError("kernel rows must sum to 1")
        if np.any(self.rewards < 0) or np.any(self.rewards > self.r_max):
            raise ValueError("rewards must lie in [0, r_max]")

    @property
    def n_joint(self) -> int:
        return int(np.prod(self.actions_per_agent))

    def joint_index(self, actions: Sequence[int] | np.ndarray) -> np.ndarray | int:
        """Encode per-agent actions (last axis = agents) as joint indices."""
        actions = np.asarray(actions)
        return np.ravel_multi_index(tuple(np.moveaxis(actions, -1, 0)), self.actions_per_agent)

    def joint_actions(self, joint: int | np.ndarray) -> np.ndarray:
        """Decode joint indices into per-agent actions (agents on the last axis)."""
        return np.stack(np.unravel_index(joint, self.actions_per_agent), axis=-1)


@dataclass(frozen=True, eq=False)
class PolicySet:
    """Factored behavior and target policies, one ``(S, |A_m|)`` table per agent."""

    behavior: tuple[np.ndarray, ...]
    target: tuple[np.ndarray, ...]
    floor_prob: float = 0.0

    def __post_init__(self):
        if len(self.behavior) != len(self.target):
            raise ValueError("behavior and target need one table per agent")
        for pb, pt in zip(self.behavior, self.target):
            if pb.shape != pt.shape:
                raise ValueError("behavior/target table shapes differ")
            for tab in (pb, pt):
                if np.any(tab < 0) or np.max(np.abs(tab.sum(axis=1) - 1.0)) > ROW_TOL:
                    raise ValueError("policy rows must lie on the probability simplex")

    @property
    def n_agents(self) -> int:
        return len(self.behavior)

    def ratio_tables(self) -> list[np.ndarray]:
        """Local importance ratios ``pi^(m)(a|s) / pi_b^(m)(a|s)`` per agent."""
        from .ratios import ratio_table

        return [ratio_table(self, m) for m in range(self.n_agents)]

    def joint_behavior(self) -> np.ndarray:
        """Joint behavior probabilities, shape ``(S, J)``."""
        return _joint_product(self.behavior)

    def joint_target(self) -> np.ndarray:
        return _joint_product(self.target)


def _joint_product(tables: Sequence[np.ndarray]) -> np.ndarray:
    out = tables[0]
    for tab in tables[1:]:
        out = (out[:, :, None] * tab[:, None, :]).reshape(out.shape[0], -1)
    return out


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Linear features; column ``s`` of ``table`` is ``phi(s)``."""

    table: np.ndarray

    @property
    def dim(self) -> int:
        return self.table.shape[0]

    @property
    def n_states(self) -> int:
        return self.table.shape[1]

    @property
    def by_state(self) -> np.ndarray:
        """Features indexed by state, shape ``(S, d)``."""
        return self.table.T

    def rank(self) -> int:
        return numerical_rank(self.table)


def numerical_rank(mat: np.ndarray, rel_tol: float = 1e-8) -> int:
    sv = np.linalg.svd(mat, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.sum(sv > rel_tol * sv[0]))


@dataclass(frozen=True)
class Transition:
    s: int
    joint_action: tuple[int, ...]
    s_next: int
    rewards: tuple[float, ...]


@dataclass(frozen=True, eq=False)
class TransitionBatch:
    """A run of consecutive transitions stored column-wise.

    ``actions`` has shape ``(T, M)`` and ``rewards`` shape ``(T, M)``.
    """

    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray
    rewards: np.ndarray

    def __len__(self) -> int:
        return len(self.states)

    def __getitem__(self, idx: slice) -> "TransitionBatch":
        return TransitionBatch(self.states[idx], self.actions[idx],
                               self.next_states[idx], self.rewards[idx])

    def to_list(self) -> list[Transition]:
        return [
            Transition(int(s), tuple(int(a) for a in acts), int(sn), tuple(float(r) for r in rew))
            for s, acts, sn, rew in zip(self.states, self.actions, self.next_states, self.rewards)
        ]


# --------------------------------------------------------------------------
# generation


def generate_mdp(seed: int, n_states: int, n_agents: int, actions_per_agent: int,
                 r_max: float = 1.0, gamma: float = 0.95) -> MultiAgentMdp:
    """Random MDP with uniform-then-normalized kernel rows and uniform rewards."""
    if n_states < 1 or n_agents < 1 or actions_per_agent < 1:
        raise ValueError("all sizes must be at least 1")
    if r_max <= 0:
        raise ValueError("r_max must be positive")
    rng = stream(seed, "mdp")
    acts = (int(actions_per_agent),) * n_agents
    J = int(np.prod(acts))
    kernel = rng.random((n_states, J, n_states))
    kernel /= kernel.sum(axis=2, keepdims=True)
    rewards = r_max * rng.random((n_agents, n_states, J, n_states))
    return MultiAgentMdp(n_states, n_agents, acts, kernel, rewards, float(gamma), float(r_max))


def _floor_normalize(row: np.ndarray, floor: float) -> np.ndarray:
    # clamp at floor, then rescale the unclamped entries; repeat until stable
    p = np.maximum(row, floor)
    fixed = p <= floor
    for _ in range(p.size + 1):
        if fixed.all():
            # everything clamped: renormalizing equal entries gives the uniform row
            return np.full(p.size, 1.0 / p.size)
        free_mass = 1.0 - floor * fixed.sum()
        p = np.where(fixed, floor, p * free_mass / p[~fixed].sum())
        low = (p < floor) & ~fixed
        if not low.any():
            break
        fixed |= low
    return p


def generate_policies(seed: int, mdp: MultiAgentMdp, noise_std: float = 0.05,
                      floor_prob: float = 1e-2) -> PolicySet:
    """Uniform behavior policies and Gaussian-perturbed target policies."""
    if noise_std < 0:
        raise ValueError("noise_std must be non-negative")
    if not 0.0 < floor_prob < 1.0 / max(mdp.actions_per_agent):
        raise ValueError("floor_prob must lie in (0, 1/max|A_m|)")
    rng = stream(seed, "policies")
    behavior, target = [], []
    for k in mdp.actions_per_agent:
        pb = np.full((mdp.n_states, k), 1.0 / k)
        if noise_std == 0:
            pt = pb.copy()
        else:
            raw = pb + rng.normal(0.0, noise_std, size=pb.shape)
            pt = np.stack([_floor_normalize(r, floor_prob) for r in raw])
        behavior.append(pb)
        target.append(pt)
    return PolicySet(tuple(behavior), tuple(target), floor_prob)


def generate_features(seed: int, n_states: int, dim: int, max_retries: int = 16) -> FeatureMap:
    """Gaussian features with unit-norm columns and full row rank."""
    if not 1 <= dim <= n_states:
        raise ValueError("need 1 <= dim <= n_states")
    for attempt in range(max_retries + 1):
        rng = stream(seed + attempt, "features")
        table = rng.standard_normal((dim, n_states))
        norms = np.linalg.norm(table, axis=0)
        if np.any(norms == 0):
            continue
        table = table / norms
        if numerical_rank(table) == dim:
            return FeatureMap(table)
    raise FeatureRankError(f"no full-rank {dim}x{n_states} features after {max_retries} retries")


# --------------------------------------------------------------------------
# simulation


class TrajectorySampler:
    """Draws one continuing Markov trajectory under the behavior policies.

    Successive calls to :meth:`sample` pick up where the previous call
    stopped, so consecutive mini-batches form a single trajectory.
    """

    def __init__(self, mdp: MultiAgentMdp, policies: PolicySet, s0: int,
                 rng: np.random.Generator):
        if not 0 <= s0 < mdp.n_states:
            raise ValueError("s0 out of range")
        self.mdp = mdp
        self.rng = rng
        self.state = int(s0)
        kmax = max(mdp.actions_per_agent)
        cum = np.ones((mdp.n_agents, mdp.n_states, kmax))
        for m, pb in enumerate(policies.behavior):
            cum[m, :, : pb.shape[1]] = np.cumsum(pb, axis=1)
        cum[:, :, -1] = 1.0
        self._cum_pol = cum
        ck = np.cumsum(mdp.kernel, axis=2)
        ck[:, :, -1] = 1.0
        self._cum_kernel = ck
        self._radix = np.array([int(np.prod(mdp.actions_per_agent[m + 1:]))
                                for m in range(mdp.n_agents)])

    def sample(self, length: int) -> TransitionBatch:
        if length < 1:
            raise ValueError("length must be at least 1")
        M, S = self.mdp.n_agents, self.mdp.n_states
        u = self.rng.random((length, M + 1))
        states = np.empty(length, dtype=np.int64)
        nexts = np.empty(length, dtype=np.int64)
        actions = np.empty((length, M), dtype=np.int64)
        agents = np.arange(M)
        cum_pol, cum_kernel, radix = self._cum_pol, self._cum_kernel, self._radix
        s = self.state
        for t in range(length):
            a = (cum_pol[agents, s, :] <= u[t, :M, None]).sum(axis=1)
            j = int(a @ radix)
            sn = min(int(np.searchsorted(cum_kernel[s, j], u[t, M], side="right")), S - 1)
            states[t], nexts[t] = s, sn
            actions[t] = a
            s = sn
        self.state = s
        joint = actions @ radix
        rewards = self.mdp.rewards[:, states, joint, nexts].T
        return TransitionBatch(states, actions, nexts, np.ascontiguousarray(rewards))


def sample_trajectory(mdp: MultiAgentMdp, policies: PolicySet, s0: int, length: int,
                      rng: np.random.Generator) -> list[Transition]:
    """Sample ``length`` consecutive transitions starting at ``s0``."""
    return TrajectorySampler(mdp, policies, s0, rng).sample(length).to_list()


def sample_iid(mdp: MultiAgentMdp, policies: PolicySet, mu: np.ndarray, length: int,
               rng: np.random.Generator) -> TransitionBatch:
    """Independent transitions with ``s ~ mu``, actions from behavior, ``s'`` from kernel."""
    states = rng.choice(mdp.n_states, size=length, p=mu)
    actions = np.stack([
        (rng.random(length)[:, None] >= np.cumsum(pb, axis=1)[states]).sum(axis=1)
        for pb in policies.behavior
    ], axis=1)
    actions = np.minimum(actions, np.array(mdp.actions_per_agent) - 1)
    joint = mdp.joint_index(actions)
    ck = np.cumsum(mdp.kernel[states, joint], axis=1)
    nexts = np.minimum((ck <= rng.random(length)[:, None]).sum(axis=1), mdp.n_states - 1)
    rewards = mdp.rewards[:, states, joint, nexts].T
    return TransitionBatch(states, actions, nexts, np.ascontiguousarray(rewards))


# --------------------------------------------------------------------------
# stationary analysis


def state_transition_matrix(mdp: MultiAgentMdp, policies: PolicySet,
                            which: str = "behavior") -> np.ndarray:
    """State-marginal chain ``P(s'|s) = sum_a pi(a|s) P(s'|s,a)``."""
    joint = policies.joint_behavior() if which == "behavior" else policies.joint_target()
    return np.einsum("sj,sjt->st", joint, mdp.kernel)


def stationary_from_matrix(P: np.ndarray, tol: float = 1e-12,
                           max_iter: int = 1_000_000) -> np.ndarray:
    """Left Perron vector of a row-stochastic matrix by power iteration."""
    n = P.shape[0]
    mu = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = mu @ P
        nxt /= nxt.sum()
        if np.abs(nxt - mu).sum() < tol:
            return nxt
        mu = nxt
    raise ConvergenceError(
        f"power iteration did not reach residual {tol} in {max_iter} steps; "
        "chain may be reducible or periodic")


def stationary_distribution(mdp: MultiAgentMdp, policies: PolicySet,
                            tol: float = 1e-12) -> np.ndarray:
    return stationary_from_matrix(state_transition_matrix(mdp, policies), tol)


TV_FLOOR = 1e-13


def tv_distances(P: np.ndarray, mu: np.ndarray, horizon: int) -> np.ndarray:
    """``sup_s d_TV(P^t(s, .), mu)`` for ``t = 0..horizon``."""
    dist = np.eye(P.shape[0])
    out = np.empty(horizon + 1)
    for t in range(horizon + 1):
        out[t] = 0.5 * np.abs(dist - mu).sum(axis=1).max()
        dist = dist @ P
    return out


def mixing_estimate(mdp: MultiAgentMdp, policies: PolicySet, horizon: int = 30,
                    mu: np.ndarray | None = None) -> tuple[float, float]:
    """Fit ``sup_s d_TV(t) <= nu * delta**t`` over ``t = 1..horizon``.

    The rate is the least-squares slope of ``log d_TV``; the intercept is
    then raised until the curve dominates every measured point.  Distances
    below ``TV_FLOOR`` are treated as converged and left out of the fit.
    """
    P = state_transition_matrix(mdp, policies)
    return mixing_from_matrix(P, mu if mu is not None else stationary_from_matrix(P), horizon)


def mixing_from_matrix(P: np.ndarray, mu: np.ndarray, horizon: int) -> tuple[float, float]:
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    d = tv_distances(P, mu, horizon)
    if d[1] <= TV_FLOOR:
        return float(d[0]), 0.0
    if d[horizon] >= d[1]:
        raise MixingFitError("sup d_TV does not decrease over the horizon")
    t = np.arange(horizon + 1)
    keep = (t >= 1) & (d > TV_FLOOR)
    if keep.sum() < 2:
        keep[0] = True
    slope, _ = np.polyfit(t[keep], np.log(d[keep]), 1)
    delta = float(np.exp(slope))
    if delta >= 1.0:
        raise MixingFitError(f"fitted rate {delta:.4g} is not below 1")
    nu = float(np.max(d[keep] / delta ** t[keep]))
    return nu, delta


# --------------------------------------------------------------------------
# bundles


@dataclass(frozen=True, eq=False)
class EnvBundle:
    """Everything needed to replay an experiment environment."""

    mdp: MultiAgentMdp
    policies: PolicySet
    features: FeatureMap
    provenance: dict = field(default_factory=dict)


def make_env(seed: int, n_states: int = 10, n_agents: int = 10, actions_per_agent: int = 2,
             r_max: float = 1.0, gamma: float = 0.95, dim: int = 5, noise_std: float = 0.05,
             floor_prob: float = 1e-2) -> EnvBundle:
    """Build the standard random environment used by the experiments."""
    mdp = generate_mdp(seed, n_states, n_agents, actions_per_agent, r_max, gamma)
    policies = generate_policies(seed, mdp, noise_std, floor_prob)
    features = generate_features(seed, n_states, dim)
    prov = dict(seed=seed, n_states=n_states, n_agents=n_agents,
                actions_per_agent=actions_per_agent, r_max=r_max, gamma=gamma, dim=dim,
                noise_std=noise_std, floor_prob=floor_prob)
    return EnvBundle(mdp, policies, features, prov)


def save_bundle(bundle: EnvBundle, path: str | Path) -> None:
    mdp, pol = bundle.mdp, bundle.policies
    doc = {
        "format": BUNDLE_FORMAT,
        "version": BUNDLE_VERSION,
        "nStates": mdp.n_states,
        "nAgents": mdp.n_agents,
        "actionsPerAgent": list(mdp.actions_per_agent),
        "gamma": mdp.gamma,
        "rMax": mdp.r_max,
        "floorProb": pol.floor_prob,
        "kernel": mdp.kernel.tolist(),
        "rewards": mdp.rewards.tolist(),
        "behavior": [b.tolist() for b in pol.behavior],
        "target": [t.tolist() for t in pol.target],
        "features": bundle.features.table.tolist(),
        "provenance": bundle.provenance,
    }
    Path(path).write_text(json.dumps(doc))


def load_bundle(path: str | Path) -> EnvBundle:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != BUNDLE_FORMAT:
        raise ValueError(f"{path}: not an environment bundle")
    if doc.get("version") != BUNDLE_VERSION:
        raise ValueError(f"{path}: unsupported bundle version {doc.get('version')}")
    mdp = MultiAgentMdp(doc["nStates"], doc["nAgents"], tuple(doc["actionsPerAgent"]),
                        np.array(doc["kernel"], dtype=float), np.array(doc["rewards"], dtype=float),
                        doc["gamma"], doc["rMax"])
    pol = PolicySet(tuple(np.array(b, dtype=float) for b in doc["behavior"]),
                    tuple(np.array(t, dtype=float) for t in doc["target"]), doc["floorProb"])
    return EnvBundle(mdp, pol, FeatureMap(np.array(doc["features"], dtype=float)),
                     doc.get("provenance", {}))

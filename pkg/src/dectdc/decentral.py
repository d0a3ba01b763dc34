"""Decentralized mini-batch TDC (exact and gossip-estimated ratios) and TD(0).

Agent parameters are stored as ``(M, d)`` matrices whose row ``m`` belongs
to agent ``m``.  One TDC iteration mixes both matrices through the
communication matrix and adds each agent's local mini-batch update::

    Theta' = V Theta + alpha (Theta A^T + b_rows + W B^T)
    W'     = V W     + beta  (Theta A^T + b_rows + W C^T)
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from ._rng import stream
from .env import EnvBundle, TrajectorySampler, TransitionBatch
from .network import CommMatrix
from .ratios import estimate_global_ratios, global_ratio_exact, local_ratios, min_rounds
from .tdc import BatchStats, FixedPoint, agent_batch_stats, batch_stats

ALGORITHMS = ("alg1", "alg2", "td0")


@dataclass(frozen=True, eq=False)
class AgentParams:
    theta: np.ndarray
    w: np.ndarray

    @property
    def theta_bar(self) -> np.ndarray:
        return self.theta.mean(axis=0)

    @property
    def w_bar(self) -> np.ndarray:
        return self.w.mean(axis=0)


@dataclass(frozen=True)
class RunConfig:
    """One algorithm run.

    ``iterations`` counts TDC (or TD(0)) iterations; each consumes
    ``batch_size`` samples.  ``init_scale > 0`` draws the initial per-agent
    parameters from a seeded Gaussian instead of starting at zero.
    """

    algorithm: str = "alg1"
    batch_size: int = 10
    iterations: int = 100
    post_averaging: int = 0
    gossip_rounds: int = 1
    alpha: float = 2.0
    beta: float = 0.02
    seed: int = 0
    metrics_every: int = 1
    init_scale: float = 0.0
    label: str = ""

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.iterations < 0 or self.post_averaging < 0:
            raise ValueError("iterations and post_averaging must be non-negative")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("step sizes must be non-negative")
        if self.algorithm == "alg2" and self.gossip_rounds < 1:
            raise ValueError("alg2 needs gossip_rounds >= 1")
        if self.metrics_every < 1:
            raise ValueError("metrics_every must be at least 1")

    @property
    def samples_needed(self) -> int:
        return self.batch_size * self.iterations


@dataclass(frozen=True)
class IterationRecord:
    iter: int
    samples: int
    param_comm: int
    ratio_comm: int
    conv_err: float
    cons_err: float
    w_err: float


@dataclass
class Trace:
    config: RunConfig
    records: list[IterationRecord] = field(default_factory=list)
    final_theta: np.ndarray | None = None
    final_w: np.ndarray | None = None
    flags: list[str] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_dict(self) -> dict:
        return {"config": asdict(self.config), "records": [asdict(r) for r in self.records],
                "flags": list(self.flags)}


# --------------------------------------------------------------------------
# single iterations


def _check_rows(p: AgentParams, v: CommMatrix) -> None:
    if p.theta.shape[0] != v.m or p.w.shape[0] != v.m:
        raise ValueError(f"parameter rows {p.theta.shape[0]} != agent count {v.m}")


def alg1_iteration(p: AgentParams, v: CommMatrix, bs: BatchStats, alpha: float,
                   beta: float) -> AgentParams:
    """Mini-batch TDC step with shared matrices and each agent's own reward term."""
    _check_rows(p, v)
    if bs.b_vecs.shape != p.theta.shape:
        raise ValueError("reward block must have one row per agent")
    drive = p.theta @ bs.a_bar.T + bs.b_vecs
    theta = v.weights @ p.theta + alpha * (drive + p.w @ bs.b_bar.T)
    w = v.weights @ p.w + beta * (drive + p.w @ bs.c_bar.T)
    return AgentParams(theta, w)


def _alg2_update(p: AgentParams, v: CommMatrix, a_m, b_m, c, bvec_m, alpha, beta) -> AgentParams:
    drive = np.einsum("mij,mj->mi", a_m, p.theta) + bvec_m
    theta = v.weights @ p.theta + alpha * (drive + np.einsum("mij,mj->mi", b_m, p.w))
    w = v.weights @ p.w + beta * (drive + p.w @ c.T)
    return AgentParams(theta, w)


def alg2_iteration(p: AgentParams, v: CommMatrix, per_agent: Sequence[BatchStats],
                   alpha: float, beta: float) -> AgentParams:
    """TDC step where agent m uses matrices built from its own ratio estimates.

    ``per_agent[m]`` supplies agent m's ``a_bar``, ``b_bar`` and the row
    ``b_vecs[m]``; ``c_bar`` is ratio-free and taken from agent 0.
    """
    _check_rows(p, v)
    if len(per_agent) != v.m:
        raise ValueError("need one BatchStats per agent")
    a_m = np.stack([s.a_bar for s in per_agent])
    b_m = np.stack([s.b_bar for s in per_agent])
    bvec = np.stack([s.b_vecs[m] for m, s in enumerate(per_agent)])
    return _alg2_update(p, v, a_m, b_m, per_agent[0].c_bar, bvec, alpha, beta)


def td0_iteration(p: AgentParams, v: CommMatrix, bs: BatchStats, alpha: float) -> AgentParams:
    """Decentralized TD(0): gossip plus ``alpha (A theta + b)``; ``w`` is carried unchanged."""
    _check_rows(p, v)
    theta = v.weights @ p.theta + alpha * (p.theta @ bs.a_bar.T + bs.b_vecs)
    return AgentParams(theta, p.w)


def local_averaging_phase(p: AgentParams, v: CommMatrix, t_prime: int) -> AgentParams:
    """Apply ``t_prime`` gossip rounds to ``theta`` only."""
    if t_prime < 0:
        raise ValueError("t_prime must be non-negative")
    theta = p.theta
    for _ in range(t_prime):
        theta = v.weights @ theta
    return AgentParams(theta, p.w)


# --------------------------------------------------------------------------
# full runs


def initial_params(cfg: RunConfig, m: int, d: int, repetition: int = 0) -> AgentParams:
    if cfg.init_scale == 0:
        return AgentParams(np.zeros((m, d)), np.zeros((m, d)))
    rng = stream(cfg.seed, "init", repetition)
    return AgentParams(cfg.init_scale * rng.standard_normal((m, d)),
                       cfg.init_scale * rng.standard_normal((m, d)))


def draw_trajectory(env: EnvBundle, seed: int, length: int, repetition: int = 0) -> TransitionBatch:
    """One behavior trajectory whose start state is uniform over states."""
    rng = stream(seed, "trajectory", repetition)
    s0 = int(rng.integers(env.mdp.n_states))
    return TrajectorySampler(env.mdp, env.policies, s0, rng).sample(max(length, 1))


class _Recorder:
    def __init__(self, cfg: RunConfig, fp: FixedPoint):
        self.cfg = cfg
        self.fp = fp
        self.scale = float(np.linalg.norm(fp.theta_star)) or 1.0
        self.records: list[IterationRecord] = []

    def maybe(self, t: int, samples: int, param: int, ratio: int, p: AgentParams) -> None:
        if (t + 1) % self.cfg.metrics_every:
            return
        tb = p.theta_bar
        conv = float(np.linalg.norm(tb - self.fp.theta_star)) / self.scale
        cons = float(np.linalg.norm(p.theta - tb, axis=1).max()) / self.scale
        werr = float(np.linalg.norm(p.w_bar - self.fp.w_star(tb)))
        self.records.append(IterationRecord(t, samples, param, ratio, conv, cons, werr))


def run(cfg: RunConfig, env: EnvBundle, fp: FixedPoint, v: CommMatrix,
        trajectory: TransitionBatch | None = None, repetition: int = 0) -> Trace:
    """Execute ``cfg`` on ``env`` over topology ``v`` and record metrics against ``fp``.

    Without an explicit ``trajectory`` one is drawn from ``(cfg.seed, repetition)``.
    """
    M, d = env.mdp.n_agents, env.features.dim
    if v.m != M:
        raise ValueError(f"topology has {v.m} agents, environment has {M}")
    if fp.theta_star.shape[0] != d:
        raise ValueError("fixed point dimension does not match the features")
    N, T = cfg.batch_size, cfg.iterations
    if trajectory is None:
        trajectory = draw_trajectory(env, cfg.seed, N * T, repetition)
    if T and len(trajectory) < N * T:
        raise ValueError(f"trajectory has {len(trajectory)} samples, run needs {N * T}")

    trace = Trace(cfg)
    if cfg.algorithm == "alg2" and v.m > 1 and v.sigma2 > 0:
        need = min_rounds(v.m, v.sigma2)
        if cfg.gossip_rounds < need:
            trace.flags.append(f"bound not guaranteed: L={cfg.gossip_rounds} < min_rounds={need}")

    gamma, feats = env.mdp.gamma, env.features
    used = trajectory[: N * T]
    loc = local_ratios(env.policies, used.states, used.actions) if T else np.ones((M, 0))
    rho = global_ratio_exact(loc) if T else np.ones(0)

    p = initial_params(cfg, M, d, repetition)
    rec = _Recorder(cfg, fp)
    param = ratio = 0
    if cfg.algorithm == "td0" and N == 1:
        p, param, ratio = _td0_single_sample(p, v, used, rho, env, cfg, rec)
    else:
        for t in range(T):
            sl = slice(t * N, (t + 1) * N)
            chunk = used[sl]
            if cfg.algorithm == "alg1":
                bs = batch_stats(chunk, feats, rho[sl], gamma)
                p = alg1_iteration(p, v, bs, cfg.alpha, cfg.beta)
                param, ratio = param + 2, ratio + M - 1
            elif cfg.algorithm == "alg2":
                rho_hat = estimate_global_ratios(loc[:, sl], v, cfg.gossip_rounds)
                stats = agent_batch_stats(chunk, feats, rho_hat, gamma)
                p = _alg2_update(p, v, *stats, cfg.alpha, cfg.beta)
                param, ratio = param + 2, ratio + cfg.gossip_rounds
            else:
                p = td0_iteration(p, v, batch_stats(chunk, feats, rho[sl], gamma), cfg.alpha)
                param, ratio = param + 1, ratio + M - 1
            rec.maybe(t, (t + 1) * N, param, ratio, p)
    for k in range(cfg.post_averaging):
        p = local_averaging_phase(p, v, 1)
        param += 1
        rec.maybe(T + k, T * N, param, ratio, p)

    trace.records = rec.records
    trace.final_theta, trace.final_w = p.theta, p.w
    return trace


def _td0_single_sample(p, v, used, rho, env, cfg, rec):
    # same update as td0_iteration without forming d x d matrices
    phi = env.features.by_state[used.states]
    dphi = env.mdp.gamma * env.features.by_state[used.next_states] - phi
    theta, M = p.theta, v.m
    param = ratio = 0
    for t in range(len(used)):
        td = theta @ dphi[t] + used.rewards[t]
        theta = v.weights @ theta + (cfg.alpha * rho[t]) * td[:, None] * phi[t]
        param, ratio = param + 1, ratio + M - 1
        if (t + 1) % cfg.metrics_every == 0:
            rec.maybe(t, t + 1, param, ratio, AgentParams(theta, p.w))
    return AgentParams(theta, p.w), param, ratio


def run_algorithm1(cfg: RunConfig, env: EnvBundle, fp: FixedPoint, v: CommMatrix,
                   trajectory: TransitionBatch | None = None) -> Trace:
    if cfg.algorithm != "alg1":
        raise ValueError("run_algorithm1 needs algorithm='alg1'")
    return run(cfg, env, fp, v, trajectory)


def run_algorithm2(cfg: RunConfig, env: EnvBundle, fp: FixedPoint, v: CommMatrix,
                   trajectory: TransitionBatch | None = None) -> Trace:
    if cfg.algorithm != "alg2":
        raise ValueError("run_algorithm2 needs algorithm='alg2'")
    return run(cfg, env, fp, v, trajectory)


def run_td0_baseline(cfg: RunConfig, env: EnvBundle, fp: FixedPoint, v: CommMatrix,
                     trajectory: TransitionBatch | None = None) -> Trace:
    if cfg.algorithm != "td0":
        raise ValueError("run_td0_baseline needs algorithm='td0'")
    return run(cfg, env, fp, v, trajectory)


def run_expected(cfg: RunConfig, fp: FixedPoint, v: CommMatrix) -> Trace:
    """Algorithm 1 driven by the exact expected matrices (the infinite-batch limit)."""
    M, d = v.m, fp.theta_star.shape[0]
    if fp.b_per_agent.shape[0] != M:
        raise ValueError("fixed point agent count does not match the topology")
    p = initial_params(cfg, M, d)
    rec = _Recorder(cfg, fp)
    for t in range(cfg.iterations):
        p = alg1_iteration(p, v, fp, cfg.alpha, cfg.beta)
        rec.maybe(t, (t + 1) * cfg.batch_size, 2 * (t + 1), (M - 1) * (t + 1), p)
    trace = Trace(cfg, rec.records, p.theta, p.w)
    return trace

"""Executable invariant suite.

Each check returns a :class:`Check` with a measured margin (positive means
the invariant holds with room to spare).  Checks never raise; an exception
inside a check becomes a failed entry carrying the error text.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ._rng import stream
from .decentral import AgentParams, alg1_iteration, _alg2_update
from .env import (EnvBundle, FeatureMap, MultiAgentMdp, PolicySet, TrajectorySampler,
                  generate_mdp, generate_policies, make_env, stationary_distribution)
from .network import (CommMatrix, build_fully_connected, build_ring, difference, validate)
from .ratios import (estimate_global_ratios, global_ratio_exact, local_ratios, log_gossip_path,
                     min_rounds, ratio_error_bound, ratio_extrema)
from .tdc import (agent_batch_stats, batch_stats, compute_bounds, empirical_batch_deviation,
                  expected_stats, fixed_point_for)

DEFAULT_SEED = 0


@dataclass
class Check:
    name: str
    passed: bool
    margin: float
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.name}: margin={self.margin:.3g} ({self.detail}) {self.seconds:.2f}s"


@dataclass
class Report:
    checks: list[Check] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def text(self) -> str:
        lines = [c.line() for c in self.checks]
        n_fail = sum(not c.passed for c in self.checks)
        lines.append(f"{len(self.checks) - n_fail}/{len(self.checks)} checks passed")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {"passed": self.passed,
                "checks": [dict(name=c.name, passed=c.passed, margin=c.margin, detail=c.detail,
                                seconds=c.seconds) for c in self.checks]}


def _guard(name: str, fn: Callable[[], tuple[bool, float, str]]) -> Check:
    t0 = time.perf_counter()
    try:
        ok, margin, detail = fn()
    except Exception as exc:  # a crashing check is a failing check
        ok, margin, detail = False, float("-inf"), f"{type(exc).__name__}: {exc}"
    return Check(name, bool(ok), float(margin), detail, time.perf_counter() - t0)


# --------------------------------------------------------------------------
# individual checks


def check_consensus_contraction(v: CommMatrix, seed: int, rounds: int = 30, d: int = 5,
                                slack: float = 1e-10) -> tuple[bool, float, str]:
    """``||Delta Theta||_F`` after ``n`` gossip rounds is at most ``sigma2^n`` times its start."""
    problem = validate(v)
    if problem is not None:
        return False, float("-inf"), problem
    x = stream(seed, "verify-consensus", v.m).standard_normal((v.m, d))
    start = np.linalg.norm(difference(x))
    worst = float("inf")
    for n in range(1, rounds + 1):
        x = v.weights @ x
        worst = min(worst, v.sigma2 ** n * start + slack - np.linalg.norm(difference(x)))
    return worst >= 0, worst, f"σ₂={v.sigma2:.6g}, {rounds} rounds"


def check_features(features: FeatureMap) -> tuple[bool, float, str]:
    """Full row rank and ``0 < ||phi(s)|| <= 1`` for every state."""
    d = features.dim
    rank = features.rank()
    norms = np.linalg.norm(features.by_state, axis=1)
    zero_rows = np.nonzero(np.all(features.table == 0, axis=1))[0]
    zero_states = np.nonzero(norms == 0)[0]
    if rank < d or zero_rows.size:
        return False, float(rank - d), f"rank {rank} < d={d}; zero feature rows {zero_rows.tolist()}"
    if zero_states.size:
        return False, 0.0, f"states with zero features: {zero_states.tolist()}"
    margin = 1.0 - float(norms.max())
    return margin >= -1e-12, margin, f"rank {rank}, max ||φ|| = {norms.max():.6g}"


def check_sample_bounds(env: EnvBundle, seed: int, n: int = 10_000,
                        tol: float = 1e-12) -> tuple[bool, float, str]:
    """Per-sample Frobenius norms of ``A_t, B_t, C_t`` and ``||b_t^(m)||`` against their bounds."""
    mdp, pol, feats = env.mdp, env.policies, env.features
    rng = stream(seed, "verify-samples")
    batch = TrajectorySampler(mdp, pol, int(rng.integers(mdp.n_states)), rng).sample(n)
    rho = global_ratio_exact(local_ratios(pol, batch.states, batch.actions))
    rho_min, rho_max = ratio_extrema(pol)
    bounds = compute_bounds(rho_min, rho_max, mdp.gamma, mdp.r_max)
    F = feats.by_state
    phi, phi2 = F[batch.states], F[batch.next_states]
    a = rho[:, None, None] * phi[:, :, None] * (mdp.gamma * phi2 - phi)[:, None, :]
    b = -mdp.gamma * rho[:, None, None] * phi2[:, :, None] * phi[:, None, :]
    c = -phi[:, :, None] * phi[:, None, :]
    bvec = (rho[:, None] * batch.rewards)[:, :, None] * phi[:, None, :]
    margins = {
        "A": bounds.omega_a - np.linalg.norm(a, axis=(1, 2)).max(),
        "B": bounds.omega_b - np.linalg.norm(b, axis=(1, 2)).max(),
        "C": 1.0 - np.linalg.norm(c, axis=(1, 2)).max(),
        "b": bounds.omega_b_vec - np.linalg.norm(bvec, axis=2).max(),
    }
    worst = min(margins.values())
    detail = ", ".join(f"{k}:{m:.3g}" for k, m in margins.items())
    return worst >= -tol, float(worst), f"{n} transitions; {detail}"


def check_stat_identity(env: EnvBundle, seed: int, n: int = 2000) -> tuple[bool, float, str]:
    """``C = A^T + B`` for the expected matrices and for sampled batch means."""
    fp = fixed_point_for(env)
    err_exp = np.abs(fp.c - fp.a.T - fp.b).max()
    rng = stream(seed, "verify-identity")
    mdp, pol = env.mdp, env.policies
    batch = TrajectorySampler(mdp, pol, 0, rng).sample(n)
    # with rho = 1 the identity holds sample by sample
    bs = batch_stats(batch, env.features, np.ones(n), mdp.gamma)
    err_smp = np.abs(bs.c_bar - bs.a_bar.T - bs.b_bar).max()
    worst = max(err_exp, err_smp)
    return worst <= 1e-12, 1e-12 - float(worst), f"expected {err_exp:.2g}, sampled {err_smp:.2g}"


def check_gossip_ratios(v: CommMatrix, seed: int, draws: int = 1000, n_states: int = 10,
                        actions_per_agent: int = 2) -> tuple[bool, float, str]:
    """Ratio-estimate error at ``L = min_rounds`` stays below the bound for every draw.

    Also fits the per-round contraction of the summed squared error over
    rounds ``L..2L`` and requires it to be at most ``sigma2^2 + 0.01``.
    """
    problem = validate(v)
    if problem is not None:
        return False, float("-inf"), problem
    M = v.m
    L = min_rounds(M, v.sigma2)
    rng = stream(seed, "verify-gossip", M)
    worst_rel = float("inf")
    violations = 0
    err_path = np.zeros(2 * L + 1)
    mdp = generate_mdp(seed, n_states, M, actions_per_agent)
    for k in range(draws):
        pol = generate_policies(seed + k, mdp)
        s = int(rng.integers(n_states))
        acts = np.array([rng.choice(actions_per_agent, p=pol.behavior[m][s]) for m in range(M)])
        loc = np.array([pol.target[m][s, acts[m]] / pol.behavior[m][s, acts[m]] for m in range(M)])
        rho = float(global_ratio_exact(loc))
        err = float(np.sum((estimate_global_ratios(loc, v, L) - rho) ** 2))
        bound = ratio_error_bound(M, v.sigma2, L, *ratio_extrema(pol))
        if err > bound:
            violations += 1
        worst_rel = min(worst_rel, (bound - err) / bound)
        path = log_gossip_path(loc, v, 2 * L)
        err_path += np.sum((np.exp(M * path) - rho) ** 2, axis=1)
    rate = float((err_path[2 * L] / err_path[L]) ** (1.0 / L))
    rate_margin = v.sigma2 ** 2 + 0.01 - rate
    ok = violations == 0 and rate_margin >= 0
    detail = (f"L={L}, {draws - violations}/{draws} within bound, "
              f"contraction {rate:.4f} vs σ₂²={v.sigma2 ** 2:.4f}")
    return ok, min(worst_rel, rate_margin), detail


def averaged_identity_errors(env: EnvBundle, v: CommMatrix, seed: int, algorithm: str,
                             iterations: int = 200, batch_size: int = 10, alpha: float = 0.5,
                             beta: float = 0.005, rounds: int = 3) -> np.ndarray:
    """Relative gap per iteration between agent-averaged iterates and the averaged recursion.

    For Algorithm 1 the averaged recursion is the centralized step driven by
    the shared batch means; for Algorithm 2 it is driven by the agent-average
    of each agent's own batch matrices applied to its own parameters.
    """
    M, d = env.mdp.n_agents, env.features.dim
    rng = stream(seed, "verify-averaged", 0 if algorithm == "alg1" else 1)
    batch = TrajectorySampler(env.mdp, env.policies, 0, rng).sample(iterations * batch_size)
    loc = local_ratios(env.policies, batch.states, batch.actions)
    rho = global_ratio_exact(loc)
    p = AgentParams(rng.standard_normal((M, d)), rng.standard_normal((M, d)))
    gaps = np.empty(iterations)
    gamma = env.mdp.gamma
    for t in range(iterations):
        sl = slice(t * batch_size, (t + 1) * batch_size)
        if algorithm == "alg1":
            bs = batch_stats(batch[sl], env.features, rho[sl], gamma)
            tb, wb = p.theta_bar, p.w_bar
            delta = bs.a_bar @ tb + bs.b_mean
            th_ref = tb + alpha * (delta + bs.b_bar @ wb)
            w_ref = wb + beta * (delta + bs.c_bar @ wb)
            p = alg1_iteration(p, v, bs, alpha, beta)
        else:
            rho_hat = estimate_global_ratios(loc[:, sl], v, rounds)
            a_m, b_m, c, bv = agent_batch_stats(batch[sl], env.features, rho_hat, gamma)
            delta = np.einsum("mij,mj->mi", a_m, p.theta) + bv
            th_ref = p.theta_bar + alpha * np.mean(delta + np.einsum("mij,mj->mi", b_m, p.w), axis=0)
            w_ref = p.w_bar + beta * np.mean(delta + p.w @ c.T, axis=0)
            p = _alg2_update(p, v, a_m, b_m, c, bv, alpha, beta)
        scale = max(np.linalg.norm(th_ref), np.linalg.norm(w_ref), 1e-300)
        gaps[t] = max(np.linalg.norm(p.theta_bar - th_ref), np.linalg.norm(p.w_bar - w_ref)) / scale
    return gaps


def check_averaged_identities(env: EnvBundle, v: CommMatrix, seed: int,
                              iterations: int = 200) -> tuple[bool, float, str]:
    g1 = averaged_identity_errors(env, v, seed, "alg1", iterations)
    g2 = averaged_identity_errors(env, v, seed, "alg2", iterations)
    worst = max(g1.max(), g2.max())
    return worst <= 1e-12, 1e-12 - float(worst), (
        f"{iterations} iterations; max relative gap alg1 {g1.max():.2g}, alg2 {g2.max():.2g}")


def tabular_on_policy_env(seed: int, n_states: int = 5, n_agents: int = 2,
                          actions_per_agent: int = 2, gamma: float = 0.95) -> EnvBundle:
    """Identity features and target equal to behavior, so TDC solves the true value function."""
    mdp = generate_mdp(seed, n_states, n_agents, actions_per_agent, 1.0, gamma)
    pol = generate_policies(seed, mdp)
    on = PolicySet(pol.behavior, pol.behavior, pol.floor_prob)
    return EnvBundle(mdp, on, FeatureMap(np.eye(n_states)), {"seed": seed, "tabular": True})


def tabular_value(mdp: MultiAgentMdp, pol: PolicySet) -> np.ndarray:
    """Brute-force ``(I - gamma P_pi)^{-1} rbar_pi`` with agent-averaged rewards."""
    pt = pol.joint_target()
    P = np.einsum("sj,sjt->st", pt, mdp.kernel)
    r = np.einsum("sj,sjt,sjt->s", pt, mdp.kernel, mdp.rewards.mean(axis=0))
    return np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * P, r)


def check_tabular_oracle(seed: int) -> tuple[bool, float, str]:
    env = tabular_on_policy_env(seed)
    mu = stationary_distribution(env.mdp, env.policies)
    fp = expected_stats(env.mdp, env.policies, env.features, mu)
    approx = env.features.by_state @ fp.theta_star
    err = float(np.abs(approx - tabular_value(env.mdp, env.policies)).max())
    return err <= 1e-8, 1e-8 - err, f"max componentwise gap {err:.2g}"


def batch_scaling_ratio(env: EnvBundle, seed: int, trials: int = 200,
                        sizes: tuple[int, int] = (10, 100)) -> float:
    fp = fixed_point_for(env)
    msd = [empirical_batch_deviation(env, fp, n, trials, stream(seed, "verify-batch", n))[1]
           for n in sizes]
    return msd[0] / msd[1]


def check_batch_scaling(env: EnvBundle, seed: int, trials: int = 200,
                        lo: float = 6.0, hi: float = 14.0) -> tuple[bool, float, str]:
    ratio = batch_scaling_ratio(env, seed, trials)
    margin = min(ratio - lo, hi - ratio)
    return margin >= 0, margin, f"MSD(N=10)/MSD(N=100) = {ratio:.3f}, want [{lo}, {hi}]"


# --------------------------------------------------------------------------


def default_topologies(m: int) -> list[CommMatrix]:
    return [build_fully_connected(m), build_ring(m)]


def verify_suite(seed: int = DEFAULT_SEED, topologies: Sequence[CommMatrix] | None = None,
                 features: FeatureMap | None = None, n_samples: int = 10_000,
                 ratio_draws: int = 1000, iterations: int = 200,
                 batch_trials: int = 200) -> Report:
    """Run every invariant check on the default desk-scale environment.

    ``topologies`` and ``features`` replace the defaults, which lets callers
    inject adversarial inputs and see the matching checks fail.
    """
    report = Report()
    env = make_env(seed)
    if features is not None:
        env = EnvBundle(env.mdp, env.policies, features, dict(env.provenance, features="custom"))
    tops = list(topologies) if topologies is not None else default_topologies(env.mdp.n_agents)

    def add(name, fn):
        report.checks.append(_guard(name, fn))

    for i, v in enumerate(tops):
        add(f"consensus contraction [topology {i}]",
            lambda v=v: check_consensus_contraction(v, seed))
    add("feature rank and norms", lambda: check_features(env.features))
    add("sample-stat norm bounds", lambda: check_sample_bounds(env, seed, n_samples))
    add("C = A^T + B", lambda: check_stat_identity(env, seed))
    for i, v in enumerate(tops):
        add(f"gossip ratio bound [topology {i}]",
            lambda v=v: check_gossip_ratios(v, seed, ratio_draws))
    add("averaged-iterate identities",
        lambda: check_averaged_identities(env, tops[0], seed, iterations))
    add("tabular on-policy oracle", lambda: check_tabular_oracle(seed))
    add("mini-batch 1/N scaling", lambda: check_batch_scaling(env, seed, batch_trials))
    return report

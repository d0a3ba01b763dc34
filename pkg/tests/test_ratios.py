import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from dectdc.env import PolicySet, generate_mdp, generate_policies
from dectdc.errors import SupportViolation
from dectdc.network import build_fully_connected, build_ring
from dectdc.ratios import (estimate_global_ratios, global_ratio_exact, local_ratio, local_ratios,
                           log_gossip_path, min_rounds, ratio_error_bound, ratio_extrema)


def _pol(pb_row, pt_row):
    return PolicySet((np.array([pb_row]),), (np.array([pt_row]),))


class TestLocalRatio:
    def test_on_policy(self):
        assert local_ratio(_pol([0.5, 0.5], [0.5, 0.5]), 0, 0, 1) == 1.0

    def test_arithmetic(self):
        assert local_ratio(_pol([0.5, 0.5], [0.6, 0.4]), 0, 0, 0) == pytest.approx(1.2)

    def test_floor(self):
        assert local_ratio(_pol([0.5, 0.5], [0.99, 0.01]), 0, 0, 1) == pytest.approx(0.02)

    def test_support_violation(self):
        with pytest.raises(SupportViolation):
            local_ratio(_pol([1.0, 0.0], [0.5, 0.5]), 0, 0, 1)

    def test_vectorized_matches_scalar(self, env):
        states = np.array([0, 3, 7])
        actions = np.array([[0] * 10, [1] * 10, [0, 1] * 5])
        loc = local_ratios(env.policies, states, actions)
        assert loc.shape == (10, 3)
        for m in range(10):
            for t in range(3):
                assert loc[m, t] == local_ratio(env.policies, m, states[t], actions[t, m])


class TestGlobalExact:
    def test_single(self):
        assert global_ratio_exact([1.7]) == pytest.approx(1.7)

    def test_product(self):
        assert global_ratio_exact([2, 0.5, 1]) == pytest.approx(1.0)

    def test_ones(self):
        assert global_ratio_exact(np.ones(6)) == 1.0

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            global_ratio_exact([1.0, 0.0])


class TestEstimate:
    @given(st.floats(0.1, 3.0), st.integers(1, 20))
    def test_constant_locals(self, c, rounds):
        est = estimate_global_ratios(np.full(10, c), build_ring(10), rounds)
        assert np.allclose(est, c ** 10, rtol=1e-12)

    def test_uniform_one_round_exact(self):
        v = build_fully_connected(4, 0.25)
        loc = np.array([1.2, 0.7, 1.1, 0.9])
        assert np.allclose(estimate_global_ratios(loc, v, 1), np.prod(loc), rtol=1e-12)

    def test_ring3_converges(self):
        est = estimate_global_ratios(np.array([2.0, 0.5, 1.0]), build_ring(3), 50)
        assert np.allclose(est, 1.0, atol=1e-6)

    def test_batch_matches_columns(self, ring):
        loc = np.random.default_rng(0).uniform(0.5, 1.5, (10, 4))
        est = estimate_global_ratios(loc, ring, 5)
        for j in range(4):
            assert np.allclose(est[:, j], estimate_global_ratios(loc[:, j], ring, 5), rtol=1e-13)

    @given(arrays(float, (10,), elements=st.floats(0.2, 5.0)), st.sampled_from(["full", "ring"]))
    def test_log_mean_and_contraction(self, loc, kind):
        v = build_fully_connected(10) if kind == "full" else build_ring(10)
        path = log_gossip_path(loc, v, 30)
        means = path.mean(axis=1)
        assert np.abs(means - means[0]).max() < 1e-12
        spread = ((path - means[:, None]) ** 2).sum(axis=1)
        assert np.all(np.diff(spread) <= 1e-12)
        ell = np.arange(31)
        assert np.all(spread <= v.sigma2 ** (2 * ell) * spread[0] + 1e-10)
        # geometric mean of estimates recovers the exact product
        est = estimate_global_ratios(loc, v, 7)
        assert np.exp(np.log(est).mean()) == pytest.approx(np.prod(loc), rel=1e-10)


class TestRounds:
    def test_single_agent(self):
        assert min_rounds(1, 0.5) == 1

    def test_full(self):
        assert min_rounds(10, 0.77778) == 14

    def test_ring(self):
        assert min_rounds(10, 0.9618) == 89

    def test_bound_flat_ratio(self):
        assert ratio_error_bound(10, 0.8, 3, 1.3, 1.3) == 0.0

    def test_bound_zero_sigma(self):
        assert ratio_error_bound(10, 0.0, 1, 0.5, 2.0) == 0.0

    def test_bound_value(self):
        expect = 27 * 0.7 ** 20 * 8 * math.log(4) ** 2
        got = ratio_error_bound(3, 0.7, 10, 0.5, 2.0)
        assert got == pytest.approx(expect, rel=1e-12)
        # 27 * 7.979e-4 * 8 * 1.9218 = 0.3312
        assert got == pytest.approx(0.3312, abs=5e-5)


class TestExtrema:
    def test_bracket_all_ratios(self):
        mdp = generate_mdp(2, 6, 4, 2)
        pol = generate_policies(2, mdp)
        lo, hi = ratio_extrema(pol)
        tabs = pol.ratio_tables()
        assert all(t.min() >= lo and t.max() <= hi for t in tabs)
        glob = pol.joint_target() / pol.joint_behavior()
        assert glob.min() == pytest.approx(lo) or glob.min() >= lo
        assert glob.max() <= hi * (1 + 1e-12) and glob.min() >= lo * (1 - 1e-12)
        assert min(glob.min(), min(t.min() for t in tabs)) == pytest.approx(lo, rel=1e-12)
        assert max(glob.max(), max(t.max() for t in tabs)) == pytest.approx(hi, rel=1e-12)

    def test_error_bound_on_random_draws(self, full):
        mdp = generate_mdp(5, 10, 10, 2)
        L = min_rounds(10, full.sigma2)
        rng = np.random.default_rng(0)
        for k in range(50):
            pol = generate_policies(100 + k, mdp)
            s = int(rng.integers(10))
            acts = rng.integers(2, size=10)
            loc = np.array([pol.target[m][s, acts[m]] / 0.5 for m in range(10)])
            rho = np.prod(loc)
            err = np.sum((estimate_global_ratios(loc, full, L) - rho) ** 2)
            assert err <= ratio_error_bound(10, full.sigma2, L, *ratio_extrema(pol))

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from dectdc.errors import SpecError
from dectdc.network import (CommMatrix, build_fully_connected, build_ring, consensus_error,
                            difference, gossip_round, load_topology, save_topology,
                            second_singular_value, validate)

finite = st.floats(-10, 10, allow_nan=False)


class TestBuilders:
    def test_fully_connected_default(self, full):
        off = full.weights[~np.eye(10, dtype=bool)]
        assert np.allclose(off, 1 / 45)
        assert full.sigma2 == pytest.approx(0.8 - 1 / 45, abs=1e-12)
        assert full.sigma2 == pytest.approx(0.77778, abs=1e-5)
        assert validate(full) is None

    def test_two_agents_half(self):
        v = build_fully_connected(2, 0.5)
        assert np.allclose(v.weights, 0.5)
        assert v.sigma2 == pytest.approx(0.0, abs=1e-12)

    def test_single_agent(self):
        v = build_fully_connected(1, 1.0)
        assert v.weights.tolist() == [[1.0]] and v.sigma2 == 0.0

    @pytest.mark.parametrize("m,diag,nb,expect", [
        (10, 0.8, 0.1, 0.8 + 0.2 * np.cos(2 * np.pi / 10)),
        (3, 0.8, 0.1, 0.7),
        (4, 0.5, 0.25, 0.5),
    ])
    def test_ring_circulant(self, m, diag, nb, expect):
        v = build_ring(m, diag, nb)
        assert v.sigma2 == pytest.approx(expect, abs=1e-12)
        assert validate(v) is None

    def test_ring_default_value(self, ring):
        assert ring.sigma2 == pytest.approx(0.96180, abs=1e-5)

    def test_ring_rejects_bad_weights(self):
        with pytest.raises(ValueError):
            build_ring(5, 0.8, 0.2)


class TestValidate:
    def test_identity_disconnected(self):
        eye = np.eye(4)
        msg = validate(CommMatrix(eye, eye > 0, second_singular_value(eye)))
        assert msg is not None and "σ₂=1" in msg

    def test_row_but_not_column_stochastic(self):
        w = np.array([[0.5, 0.5, 0.0], [0.5, 0.5, 0.0], [0.5, 0.0, 0.5]])
        msg = validate(CommMatrix(w, w > 0, second_singular_value(w)))
        assert "column sums" in msg

    def test_negative(self):
        w = np.array([[1.5, -0.5], [-0.5, 1.5]])
        assert validate(CommMatrix(w, w != 0, 1.0)) == "negative weights"

    def test_adjacency_mismatch(self, full):
        adj = full.adjacency.copy()
        adj[0, 1] = False
        assert "adjacency" in validate(CommMatrix(full.weights, adj, full.sigma2))


class TestSingularValue:
    def test_rank_one(self):
        assert second_singular_value(np.full((5, 5), 0.2)) == pytest.approx(0, abs=1e-12)

    def test_identity(self):
        assert second_singular_value(np.eye(3)) == pytest.approx(1.0)


class TestGossip:
    def test_identical_rows_fixed(self, ring):
        x = np.tile([1.0, -2.0, 3.0], (10, 1))
        assert np.allclose(gossip_round(x, ring), x, atol=1e-15)

    def test_uniform_averaging(self):
        v = build_fully_connected(4, 0.25)
        x = np.arange(12.0).reshape(4, 3)
        assert np.allclose(gossip_round(x, v), x.mean(axis=0))

    def test_wrong_rows(self, ring):
        with pytest.raises(ValueError):
            gossip_round(np.zeros((3, 2)), ring)

    @given(arrays(float, (10, 3), elements=finite))
    def test_properties(self, x):
        for v in (build_fully_connected(10), build_ring(10)):
            # column means preserved, V and the difference operator commute
            assert np.allclose(gossip_round(x, v).mean(axis=0), x.mean(axis=0), atol=1e-12)
            assert np.abs(difference(v.weights @ x) - v.weights @ difference(x)).max() <= 1e-12
            assert np.linalg.norm(v.weights @ x) <= np.linalg.norm(x) + 1e-12
            dx = difference(x)
            y = dx
            for n in range(1, 21):
                y = v.weights @ y
                assert np.linalg.norm(y) <= v.sigma2 ** n * np.linalg.norm(dx) + 1e-10

    @given(arrays(float, (7,), elements=finite))
    def test_difference_zero_mean(self, x):
        assert abs(difference(x).mean()) < 1e-12


class TestConsensusError:
    def test_identical_rows(self):
        assert consensus_error(np.ones((4, 3))) == (0.0, 0.0)

    def test_two_agents(self):
        fro, mx = consensus_error(np.array([[1.0, 0.0], [0.0, 1.0]]))
        assert fro == pytest.approx(1.0)
        assert mx == pytest.approx(np.sqrt(2) / 2)


class TestTopologyFile:
    def test_round_trip(self, tmp_path, ring):
        p = tmp_path / "ring.yaml"
        save_topology(ring, p)
        back = load_topology(p)
        assert np.array_equal(back.weights, ring.weights)
        assert back.sigma2 == pytest.approx(ring.sigma2)

    def test_sigma2_cross_check(self, tmp_path):
        p = tmp_path / "t.yaml"
        p.write_text("m: 2\nweights: [0.5, 0.5, 0.5, 0.5]\nsigma2: 0.3\n")
        with pytest.raises(SpecError, match="sigma2"):
            load_topology(p)

    def test_unknown_key(self, tmp_path):
        p = tmp_path / "t.yaml"
        p.write_text("m: 1\nweights: [1]\nextra: 3\n")
        with pytest.raises(SpecError, match="unknown"):
            load_topology(p)

    def test_invalid_matrix(self, tmp_path):
        p = tmp_path / "t.yaml"
        p.write_text("m: 2\nweights: [1, 0, 0, 1]\n")
        with pytest.raises(SpecError, match="σ₂=1"):
            load_topology(p)
        assert load_topology(p, check=False).sigma2 == pytest.approx(1.0)

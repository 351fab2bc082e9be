import math

import numpy as np
import pytest

from enarkit.lsm import (
    LsmConfig,
    LsmState,
    fit_lsm,
    lsm_gradient,
    lsm_loglik,
    project_constraints,
    read_latent_csv,
    sample_lsm_graph,
    write_latent_csv,
)
from enarkit.network import Graph
from oracles import lsm_fd_gradient, lsm_loglik_loop, random_orthogonal


def empty_graph(n):
    return Graph(n, np.zeros((n, n)))


def complete_graph(n):
    return Graph(n, np.ones((n, n)) - np.eye(n))


def random_graph(n, density, rng):
    a = np.triu((rng.random((n, n)) < density).astype(float), 1)
    return Graph(n, a + a.T)


def random_state(n, k, rng, scale=1.0):
    return LsmState(scale * rng.standard_normal((n, k)), scale * rng.standard_normal(n))


class TestLoglik:
    def test_flat_state_counts_pairs(self):
        n = 7
        state = LsmState(np.zeros((n, 2)), np.zeros(n))
        expected = -math.comb(n, 2) * math.log(2.0)
        assert lsm_loglik(state, random_graph(n, 0.5, np.random.default_rng(0))) == pytest.approx(
            expected, rel=1e-12
        )

    def test_saturated_complete_graph_near_zero(self):
        n = 6
        state = LsmState(np.zeros((n, 1)), np.full(n, 20.0))
        ll = lsm_loglik(state, complete_graph(n))
        assert -1e-6 < ll <= 0.0

    def test_matches_pairwise_loop(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            g = random_graph(5, 0.5, rng)
            state = random_state(5, 2, rng)
            assert lsm_loglik(state, g) == pytest.approx(
                lsm_loglik_loop(state, g.adjacency), abs=1e-12
            )

    def test_rotation_invariance_through_gram(self):
        rng = np.random.default_rng(2)
        g = random_graph(8, 0.4, rng)
        state = random_state(8, 3, rng)
        rot = random_orthogonal(3, rng)
        rotated = LsmState(state.q @ rot, state.v)
        assert lsm_loglik(rotated, g) == pytest.approx(lsm_loglik(state, g), rel=1e-12)


class TestGradient:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            n = int(rng.integers(3, 7))
            g = random_graph(n, 0.5, rng)
            state = random_state(n, 2, rng, scale=0.7)
            dq, dv = lsm_gradient(state, g)
            fd_dq, fd_dv = lsm_fd_gradient(state, g)
            denom = max(np.max(np.abs(fd_dq)), np.max(np.abs(fd_dv)), 1e-8)
            assert np.max(np.abs(dq - fd_dq)) / denom < 1e-4
            assert np.max(np.abs(dv - fd_dv)) / denom < 1e-4

    def test_empty_graph_flat_state_value(self):
        # chi = 0 on the empty graph: residual is -1/2 off the diagonal
        n = 6
        state = LsmState(np.zeros((n, 1)), np.zeros(n))
        _, dv = lsm_gradient(state, empty_graph(n))
        assert np.allclose(dv, -(n - 1) / 2.0, atol=1e-12)
        assert np.all(dv < 0)

    def test_saturated_fit_near_critical(self):
        n = 6
        state = LsmState(np.zeros((n, 1)), np.full(n, 20.0))
        dq, dv = lsm_gradient(state, complete_graph(n))
        assert max(np.max(np.abs(dq)), np.max(np.abs(dv))) < 1e-6


class TestProjection:
    def feasible_state(self, rng, n=20, k=2):
        q = rng.standard_normal((n, k))
        return project_constraints(LsmState(q, 0.3 * rng.standard_normal(n)))

    def test_idempotent_on_feasible_states(self):
        rng = np.random.default_rng(4)
        state = self.feasible_state(rng)
        again = project_constraints(state)
        assert np.max(np.abs(again.q - state.q)) < 1e-12
        assert np.max(np.abs(again.v - state.v)) < 1e-12

    def test_centering_removes_column_means(self):
        rng = np.random.default_rng(5)
        q = rng.standard_normal((15, 2)) + np.array([3.0, -2.0])
        out = project_constraints(LsmState(q, np.zeros(15)))
        assert out.centering_residual() < 1e-10

    def test_gram_diagonal_descending_and_preserved(self):
        rng = np.random.default_rng(6)
        q = rng.standard_normal((25, 2))
        state = LsmState(q, np.zeros(25))
        out = project_constraints(state, row_norm_cap=1e9)  # capping disabled
        gram = out.q.T @ out.q
        assert abs(gram[0, 1]) < 1e-10
        assert gram[0, 0] >= gram[1, 1]
        # centering then rotation: the Gram of the centered q is preserved
        qc = q - q.mean(axis=0)
        assert np.allclose(out.q @ out.q.T, qc @ qc.T, atol=1e-10)

    def test_row_cap_enforced(self):
        rng = np.random.default_rng(7)
        state = LsmState(5.0 * rng.standard_normal((10, 2)), 5.0 * rng.standard_normal(10))
        out = project_constraints(state, row_norm_cap=2.0)
        norms = np.sqrt((out.q**2).sum(axis=1) + out.v**2)
        assert np.all(norms <= 2.0 + 1e-9)


class TestFitLsm:
    def test_zero_iters_returns_projected_initializer(self):
        rng = np.random.default_rng(8)
        g = random_graph(30, 0.3, rng)
        fit = fit_lsm(g, 2, LsmConfig(max_iters=0), np.random.default_rng(0))
        assert fit.n_iters == 0
        assert len(fit.loglik_trace) == 1
        assert fit.state.centering_residual() < 1e-8

    def test_monotone_ascent_and_improvement(self):
        rng = np.random.default_rng(9)
        g = random_graph(40, 0.25, rng)
        fit = fit_lsm(g, 2, LsmConfig(max_iters=100), np.random.default_rng(0))
        trace = np.array(fit.loglik_trace)
        assert np.all(np.diff(trace) >= -1e-12)
        assert trace[-1] >= trace[0]

    def test_feasibility_after_fit(self):
        rng = np.random.default_rng(10)
        g = random_graph(35, 0.3, rng)
        fit = fit_lsm(g, 3, LsmConfig(max_iters=50), np.random.default_rng(0))
        assert fit.state.centering_residual() < 1e-8
        assert fit.state.diagonality_residual() < 1e-8
        cap = 3.0 * math.sqrt(4.0)
        norms = np.sqrt((fit.state.q**2).sum(axis=1) + fit.state.v**2)
        assert np.all(norms <= cap + 1e-9)

    def test_planted_model_recovery_improves_with_n(self):
        medians = []
        for n in (60, 150):
            errs = []
            for rep in range(4):
                rng = np.random.default_rng(1000 * n + rep)
                truth = planted_state(n, 2, rng)
                g = sample_lsm_graph(truth, rng, allow_isolated=True)
                fit = fit_lsm(g, 2, LsmConfig(max_iters=300), rng)
                chi_t, chi_h = truth.chi(), fit.state.chi()
                errs.append(np.linalg.norm(chi_h - chi_t) / np.linalg.norm(chi_t))
            medians.append(np.median(errs))
        assert medians[1] < medians[0]


def planted_state(n, k, rng):
    """Dense-ish planted instance with visible multiplicative structure."""
    q = 0.8 * rng.standard_normal((n, k))
    v = -1.2 + 0.3 * rng.standard_normal(n)
    return project_constraints(LsmState(q, v))


class TestLatentCsv:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(11)
        state = random_state(9, 3, rng)
        path = tmp_path / "latent.csv"
        write_latent_csv(state, str(path))
        back = read_latent_csv(str(path))
        assert np.array_equal(back.q, state.q)
        assert np.array_equal(back.v, state.v)

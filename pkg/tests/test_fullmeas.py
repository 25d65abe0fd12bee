import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedrep_lab import fullmeas as fm
from fedrep_lab.errors import DimensionMismatch, RankDeficient


def admissible_run(n=30, d=20, k=3, seed=0, rounds=60, scale=1.0):
    problem = fm.random_problem(n, d, k, seed)
    v0 = fm.random_v0(d, k, seed)
    eta = scale * fm.theorem_step_size(problem, fm.qr_decompose(v0).r)
    return problem, fm.run_fullmeas(problem, v0, eta, rounds)


class TestMinimizeU:
    def test_identity(self):
        p = fm.problem_from_matrix(np.eye(2))
        np.testing.assert_allclose(fm.minimize_u(p, np.eye(2)), np.eye(2), atol=1e-14)

    def test_diag(self):
        p = fm.problem_from_matrix(np.diag([2.0, 1.0]))
        np.testing.assert_allclose(fm.minimize_u(p, np.eye(2)), np.diag([2.0, 1.0]), atol=1e-14)

    def test_exact_subspace_fixed_point(self):
        p = fm.random_problem(8, 6, 2, seed=3)
        u = fm.minimize_u(p, p.v_star)
        np.testing.assert_allclose(u, p.u_star * p.sigma_star, atol=1e-10)
        assert fm.objective(p, u, p.v_star) <= 1e-20

    def test_singular_v(self):
        p = fm.random_problem(8, 6, 2, seed=3)
        with pytest.raises(RankDeficient):
            fm.minimize_u(p, np.ones((6, 2)))


class TestGradientStep:
    def test_zero_gradient_at_exact_factorization(self):
        p = fm.random_problem(8, 6, 2, seed=4)
        u = p.u_star * p.sigma_star
        np.testing.assert_allclose(fm.gradient_step_v(p, u, p.v_star, 0.3), p.v_star, atol=1e-12)

    def test_zero_step(self):
        p = fm.random_problem(8, 6, 2, seed=4)
        v = fm.random_v0(6, 2, seed=4)
        u = fm.minimize_u(p, v)
        assert np.array_equal(fm.gradient_step_v(p, u, v, 0.0), v)

    def test_matches_finite_differences(self):
        p = fm.random_problem(7, 5, 2, seed=5)
        rng = np.random.default_rng(0)
        u, v, dv = rng.standard_normal((7, 2)), rng.standard_normal((5, 2)), rng.standard_normal((5, 2))
        h = 1e-6
        fd = (fm.objective(p, u, v + h * dv) - fm.objective(p, u, v - h * dv)) / (2 * h)
        assert np.sum(fm.gradient_v(p, u, v) * dv) == pytest.approx(fd, rel=1e-6)


class TestStepSize:
    def test_unit_spectrum(self):
        p = fm.problem_from_matrix(np.eye(3))
        assert fm.theorem_step_size(p, np.eye(3)) == pytest.approx(0.5)

    def test_spectrum_2_1(self):
        p = fm.problem_from_matrix(np.diag([2.0, 1.0]))
        assert fm.theorem_step_size(p, np.eye(2)) == pytest.approx(1 / 32)

    def test_scaled_r0(self):
        p = fm.problem_from_matrix(np.array([[1.0]]))
        assert fm.theorem_step_size(p, 2 * np.eye(1)) == pytest.approx(2.0)

    def test_singular_r0(self):
        p = fm.problem_from_matrix(np.eye(2))
        with pytest.raises(RankDeficient):
            fm.theorem_step_size(p, np.diag([1.0, 0.0]))


def test_problem_from_matrix_rank_checks():
    with pytest.raises(DimensionMismatch):
        fm.problem_from_matrix(np.eye(3), k=2)
    with pytest.raises(RankDeficient):
        fm.problem_from_matrix(np.diag([1.0, 0.0]), k=2)
    assert fm.problem_from_matrix(np.diag([3.0, 1.0, 0.0])).k == 2


def test_exact_start_reaches_zero_loss():
    p = fm.random_problem(10, 8, 2, seed=1)
    trace = fm.run_fullmeas(p, p.v_star, 0.01, 5)
    assert trace.loss[0] <= 1e-20
    assert np.all(trace.dist <= 1e-12)


def test_identity_target_loss_bound():
    p = fm.problem_from_matrix(np.eye(2))
    trace = fm.run_fullmeas(p, fm.random_v0(2, 2, seed=2), 0.5, 30)
    assert np.all(trace.loss <= 2 * 0.75 ** np.arange(31) + 1e-9)


class TestTraceInvariants:
    def test_r_recursion(self):
        _, trace = admissible_run()
        assert trace.r_recursion_residual().max() <= 1e-9
        assert trace.cross_term_residual().max() <= 1e-9

    def test_r_is_upper_triangular_with_nonnegative_diagonal(self):
        _, trace = admissible_run(rounds=10)
        for r in trace.r:
            assert np.allclose(np.tril(r, -1), 0)
            assert np.all(np.diag(r) >= 0)

    def test_spectrum_monotone_and_capped(self):
        _, trace = admissible_run()
        smin, smax = trace.sigma_min_r, trace.sigma_max_r
        assert np.all(np.diff(smin) >= -1e-10)
        assert np.all(np.diff(smax) >= -1e-10)
        assert np.all(smax ** 2 <= 2 * smax[0] ** 2 + 1e-8)

    def test_final_loss_bound(self):
        _, trace = admissible_run(rounds=100)
        assert trace.final_loss <= 1.05 * trace.rate_bound[-1]

    @pytest.mark.parametrize("seed", range(5))
    def test_sharpened_contraction_holds(self, seed):
        # the per-round bound keeping smin(V_t^T V*)^2 is valid at every round
        p, trace = admissible_run(seed=seed)
        factor = trace.sharpened_perp_factor(p)
        assert np.all((factor >= 0) & (factor < 1))
        assert np.all(trace.dist[1:] <= factor * trace.dist[:-1] + 1e-12)
        assert np.all(trace.perp_norm[1:] <= factor * trace.perp_norm[:-1] + 1e-12)

    def test_rows_have_trace_columns(self):
        _, trace = admissible_run(rounds=3)
        rows = list(trace.rows())
        assert len(rows) == 4
        assert tuple(rows[0]) == fm.TRACE_COLUMNS
        assert np.isnan(rows[-1]["grad_norm"])


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 3), st.integers(0, 3), st.integers(1, 4), st.integers(0, 1000))
def test_recursion_property(k, dx, nx, seed):
    d, n = k + 1 + dx, k + nx
    p = fm.random_problem(n, d, k, seed)
    v0 = fm.random_v0(d, k, seed)
    eta = fm.theorem_step_size(p, fm.qr_decompose(v0).r)
    trace = fm.run_fullmeas(p, v0, eta, 15)
    scale = max(1.0, np.abs(trace.v_gram).max())
    assert trace.r_recursion_residual().max() <= 1e-9 * scale


def test_shape_mismatch():
    p = fm.random_problem(8, 6, 2, seed=1)
    with pytest.raises(DimensionMismatch):
        fm.run_fullmeas(p, np.eye(6)[:, :3], 0.1, 2)


def test_oversized_step_is_scale_invariant():
    # U is refit exactly, so a huge step rescales V without blowing up the loss
    p = fm.random_problem(8, 6, 2, seed=1)
    trace = fm.run_fullmeas(p, fm.random_v0(6, 2, seed=1), 1e6, 20)
    assert np.all(np.isfinite(trace.loss))
    assert trace.rate < 0

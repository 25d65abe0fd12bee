import math
import warnings
from dataclasses import replace

import numpy as np
import pytest

from fedrep_lab import fedrep
from fedrep_lab import fullmeas as fm
from fedrep_lab.errors import RankDeficient
from fedrep_lab.fedrep import FedConfig, FedState
from fedrep_lab.linalg import is_orthonormal, principal_angle_distance
from fedrep_lab.synthetic import GroundTruth, SampleBatch, generate_ground_truth, sample_batch


def small(**kw):
    base = dict(n=20, d=8, k=2, m=5, r=0.5, rounds=30, seed=1)
    base.update(kw)
    return FedConfig(**base)


def gt_for(cfg):
    return generate_ground_truth(cfg.n, cfg.d, cfg.k, cfg.seed)


def test_config_defaults_and_validation():
    cfg = FedConfig()
    assert (cfg.n, cfg.d, cfg.k, cfg.m, cfg.r) == (100, 10, 2, 5, 0.1)
    assert cfg.participants == 10
    for bad in (dict(k=10), dict(r=0.0), dict(eta=-1.0), dict(data_mode="x"), dict(m=0)):
        with pytest.raises(ValueError):
            FedConfig(**bad)


class TestInit:
    def test_random_is_orthonormal_and_deterministic(self):
        cfg = small()
        gt = gt_for(cfg)
        b = fedrep.init_representation(gt, cfg)
        assert is_orthonormal(b)
        assert np.array_equal(b, fedrep.init_representation(gt, cfg))

    def test_spectral_deterministic(self):
        cfg = small(init="spectral")
        gt = gt_for(cfg)
        assert np.array_equal(fedrep.init_representation(gt, cfg), fedrep.init_representation(gt, cfg))

    def test_spectral_beats_random_on_average(self):
        spectral, rand = [], []
        for seed in range(20):
            cfg = FedConfig(n=20, d=10, k=2, m=30, r=1.0, seed=seed, noise_var=0.0, init="spectral")
            gt = gt_for(cfg)
            spectral.append(principal_angle_distance(fedrep.init_representation(gt, cfg), gt.b_star))
            rcfg = replace(cfg, init="random")
            rand.append(principal_angle_distance(fedrep.init_representation(gt, rcfg), gt.b_star))
        assert np.mean(spectral) < np.mean(rand)


class TestHeadUpdate:
    def test_exact_recovery(self):
        gt = generate_ground_truth(10, 6, 2, 0)
        batch = sample_batch(gt, 4, 8, noise_var=0.0)
        np.testing.assert_allclose(fedrep.client_head_update(gt.b_star, batch), gt.w_star[4], atol=1e-8)

    def test_hand_case(self):
        batch = SampleBatch(0, np.eye(2), np.array([3.0, 0.0]), 0.0)
        w = fedrep.client_head_update(np.array([[1.0], [0.0]]), batch)
        np.testing.assert_allclose(w, [3.0])

    def test_too_few_samples(self):
        gt = generate_ground_truth(10, 6, 3, 0)
        batch = sample_batch(gt, 0, 2)
        with pytest.raises(RankDeficient):
            fedrep.client_head_update(gt.b_star, batch)

    def test_stationary(self):
        gt = generate_ground_truth(10, 6, 2, 0)
        batch = sample_batch(gt, 1, 12, seed=3)
        b = np.random.default_rng(0).standard_normal((6, 2))
        w = fedrep.client_head_update(b, batch)
        assert fedrep._head_grad_norm(b, w, batch) <= 1e-8

    def test_many_gd_steps_match_exact_head(self):
        gt = generate_ground_truth(10, 6, 2, 0)
        batch = sample_batch(gt, 1, 12, seed=3)
        b = np.random.default_rng(1).standard_normal((6, 2))
        exact = fedrep.client_head_update(b, batch)
        w = fedrep.client_head_gd(b, np.zeros(2), batch, steps=10_000)
        np.testing.assert_allclose(w, exact, atol=1e-6)

    def test_zero_lr_freezes_head(self):
        gt = generate_ground_truth(10, 6, 2, 0)
        batch = sample_batch(gt, 1, 12, seed=3)
        w0 = np.array([0.3, -0.2])
        assert np.array_equal(fedrep.client_head_gd(gt.b_star, w0, batch, steps=1, lr=0.0), w0)


class TestRepGradient:
    def test_zero_head(self):
        gt = generate_ground_truth(10, 6, 2, 0)
        batch = sample_batch(gt, 0, 5)
        assert not np.any(fedrep.client_rep_gradient(gt.b_star, np.zeros(2), batch))

    def test_zero_residual(self):
        gt = generate_ground_truth(10, 6, 2, 0)
        batch = sample_batch(gt, 0, 5, noise_var=0.0)
        g = fedrep.client_rep_gradient(gt.b_star, gt.w_star[0], batch)
        assert np.max(np.abs(g)) <= 1e-12

    @pytest.mark.parametrize("seed", range(5))
    def test_finite_differences(self, seed):
        gt = generate_ground_truth(10, 6, 2, seed)
        batch = sample_batch(gt, 0, 7, seed=seed)
        rng = np.random.default_rng(seed)
        b, w, delta = rng.standard_normal((6, 2)), rng.standard_normal(2), rng.standard_normal((6, 2))
        h = 1e-6
        fd = (fedrep.batch_loss(b + h * delta, w, batch) - fedrep.batch_loss(b - h * delta, w, batch)) / (2 * h)
        analytic = float(np.sum(fedrep.client_rep_gradient(b, w, batch) * delta))
        assert abs(analytic - fd) <= 1e-5 * max(abs(fd), 1e-12)


class TestPopulation:
    def test_at_truth(self):
        gt = generate_ground_truth(10, 6, 2, 0)
        w, g = fedrep.population_head_and_gradient(gt.b_star, gt, 3)
        np.testing.assert_allclose(w, gt.w_star[3], atol=1e-12)
        assert np.max(np.abs(g)) <= 1e-12

    def test_orthonormal_b(self):
        gt = generate_ground_truth(10, 6, 2, 0)
        b = fm.random_v0(6, 2, seed=5)
        w, _ = fedrep.population_head_and_gradient(b, gt, 2)
        np.testing.assert_allclose(w, b.T @ gt.client_params(2), atol=1e-12)

    def test_large_sample_limit(self):
        gt = generate_ground_truth(10, 6, 2, 0)
        b = np.random.default_rng(2).standard_normal((6, 2))
        batch = sample_batch(gt, 2, 100_000, noise_var=0.0, seed=4)
        w_emp = fedrep.client_head_update(b, batch)
        w_pop, g_pop = fedrep.population_head_and_gradient(b, gt, 2)
        np.testing.assert_allclose(w_emp, w_pop, atol=1e-2)
        np.testing.assert_allclose(fedrep.client_rep_gradient(b, w_emp, batch), g_pop, atol=1e-2)


class TestServerRound:
    def test_single_client_is_centralized_descent(self):
        rng = np.random.default_rng(0)
        b_star = fm.random_v0(5, 2, seed=3)
        w_star = rng.standard_normal((1, 2))
        gt = GroundTruth(w_star=w_star, b_star=b_star)
        cfg = FedConfig(n=1, d=5, k=2, r=1.0, grad_mode="population", noise_var=0.0, rounds=1)
        b = rng.standard_normal((5, 2))
        eta = 0.1
        state, _ = fedrep.server_round(FedState(b, np.zeros((1, 2)), 0), gt, cfg, eta=eta)
        target = b_star @ w_star[0]
        w = np.linalg.solve(b.T @ b, b.T @ target)
        np.testing.assert_allclose(state.b, b - eta * np.outer(b @ w - target, w), atol=1e-14)

    def test_fixed_point(self):
        cfg = small(grad_mode="population", r=1.0, noise_var=0.0)
        gt = gt_for(cfg)
        state, _ = fedrep.server_round(FedState(gt.b_star, np.zeros((cfg.n, cfg.k)), 0), gt, cfg)
        assert principal_angle_distance(state.b, gt.b_star) <= 1e-12

    def test_carried_heads_unchanged(self):
        cfg = small(r=0.25)
        gt = gt_for(cfg)
        heads = np.random.default_rng(0).standard_normal((cfg.n, cfg.k))
        state = FedState(fedrep.init_representation(gt, cfg), heads, 3)
        new, info = fedrep.server_round(state, gt, cfg)
        idle = np.setdiff1d(np.arange(cfg.n), info.participants)
        assert idle.size == cfg.n - cfg.participants
        assert np.array_equal(new.heads[idle], heads[idle])
        assert not np.array_equal(new.heads[info.participants], heads[info.participants])

    def test_participants_sorted_unique_seeded(self):
        cfg = small(r=0.3)
        a = fedrep.sample_participants(cfg, 4)
        assert a.size == 6 and np.all(np.diff(a) > 0)
        assert np.array_equal(a, fedrep.sample_participants(cfg, 4))

    def test_ortho_keeps_basis_orthonormal(self):
        cfg = small(ortho=True)
        trace = fedrep.run_fedrep(gt_for(cfg), cfg)
        assert all(is_orthonormal(b) for b in trace.b_history)


class TestRunFedrep:
    def test_parallel_equals_serial(self):
        cfg = small(rounds=15)
        gt = gt_for(cfg)
        serial = fedrep.run_fedrep(gt, cfg, workers=1)
        parallel = fedrep.run_fedrep(gt, cfg, workers=4)
        assert np.array_equal(serial.b_history, parallel.b_history)
        assert np.array_equal(serial.final_state.heads, parallel.final_state.heads)

    def test_initial_dist_recorded(self):
        cfg = small(rounds=2)
        gt = gt_for(cfg)
        trace = fedrep.run_fedrep(gt, cfg)
        b0 = fedrep.init_representation(gt, cfg)
        assert trace.dist[0] == principal_angle_distance(b0, gt.b_star)
        assert trace.e0 == pytest.approx(1 - trace.dist[0] ** 2)

    def test_population_monotone_and_within_bound(self):
        cfg = FedConfig(n=8, d=6, k=2, r=1.0, rounds=100, seed=2, noise_var=0.0, grad_mode="population", ortho=True)
        trace = fedrep.run_fedrep(gt_for(cfg), cfg)
        assert trace.bounds_exact
        assert np.all(np.diff(trace.dist) <= 1e-15)
        live = trace.dist[:-1] > 1e-12
        assert np.all(trace.contraction_ratio[live] <= trace.rate_bound + 1e-6)
        assert trace.eta == pytest.approx(1 / (4 * trace.sigma_max_bar ** 2))

    def test_empirical_run_converges(self):
        cfg = small(rounds=300, r=1.0, m=10)
        trace = fedrep.run_fedrep(gt_for(cfg), cfg)
        assert trace.dist[-1] < 0.05
        assert trace.rounds_to(0.1) is not None

    def test_large_step_warns(self):
        cfg = small(rounds=1)
        gt = gt_for(cfg)
        big = 2 * fedrep.default_eta(gt, cfg)
        with pytest.warns(RuntimeWarning):
            trace = fedrep.run_fedrep(gt, replace(cfg, eta=big))
        assert trace.warnings
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            assert not fedrep.run_fedrep(gt, cfg).warnings

    def test_rows(self):
        cfg = small(rounds=4)
        rows = list(fedrep.run_fedrep(gt_for(cfg), cfg).rows())
        assert len(rows) == 5
        assert tuple(rows[0]) == fedrep.TRACE_COLUMNS
        assert rows[1]["participants"] == cfg.participants

    def test_fixed_mode_reuses_batches(self):
        cfg = small(data_mode="fixed")
        gt = gt_for(cfg)
        a = fedrep._client_batch(gt, cfg, 3, 0)
        b = fedrep._client_batch(gt, cfg, 3, 17)
        assert np.array_equal(a.x, b.x)
        c = fedrep._client_batch(gt, replace(cfg, data_mode="fresh"), 3, 17)
        assert not np.array_equal(a.x, c.x)

    def test_worker_count_env(self, monkeypatch):
        monkeypatch.setenv(fedrep.THREADS_ENV, "3")
        assert fedrep.worker_count() == 3
        monkeypatch.delenv(fedrep.THREADS_ENV)
        assert fedrep.worker_count() == 1


class TestResidualF:
    def test_population_mode_is_zero(self):
        cfg = FedConfig(n=10, d=6, k=2, r=1.0, rounds=20, seed=0, grad_mode="population")
        trace = fedrep.run_fedrep(gt_for(cfg), cfg)
        assert np.nanmax(trace.f_norm) <= 1e-10

    def test_exact_heads_give_zero(self):
        gt = generate_ground_truth(10, 6, 2, 0)
        subset = np.arange(4)
        heads = np.array([fedrep.client_head_update(gt.b_star, sample_batch(gt, i, 5, noise_var=0.0)) for i in subset])
        assert fedrep.residual_f_diagnostic(gt.b_star, heads, gt, subset) <= 1e-8

    def test_shrinks_with_more_samples(self):
        def mean_f(m):
            vals = []
            for seed in range(20):
                gt = generate_ground_truth(10, 8, 2, seed)
                b = fm.random_v0(8, 2, seed=seed + 100)
                subset = np.arange(10)
                heads = np.array([fedrep.client_head_update(b, sample_batch(gt, i, m, seed=seed)) for i in subset])
                vals.append(fedrep.residual_f_diagnostic(b, heads, gt, subset))
            return np.mean(vals)

        assert mean_f(20) < mean_f(10)

    def test_operator_probe_vanishes_with_many_samples(self):
        gt = generate_ground_truth(6, 5, 2, 0)
        subset = np.arange(6)
        b = fm.random_v0(5, 2, seed=1)
        heads = gt.w_star @ gt.b_star.T @ b
        few = [sample_batch(gt, i, 10, seed=1) for i in subset]
        many = [sample_batch(gt, i, 50_000, seed=1) for i in subset]
        assert fedrep.operator_deviation_probe(b, heads, gt, subset, many) < fedrep.operator_deviation_probe(
            b, heads, gt, subset, few
        )


def test_heads_and_loss_finite_over_long_run():
    cfg = small(rounds=100)
    trace = fedrep.run_fedrep(gt_for(cfg), cfg)
    assert np.all(np.isfinite(trace.pop_loss))
    assert trace.pop_loss[-1] < trace.pop_loss[0]
    assert math.isfinite(trace.rate_bound)

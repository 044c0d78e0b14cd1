import json

import mpmath
import numpy as np
import pytest

from jndvqa.baselines import mos_estimate
from jndvqa.dataset import Observations
from jndvqa.jnd_model import ModelParams, make_generative_params
from jndvqa.mle import (EstimationError, FitConfig, confidence_intervals, derivatives, fit,
                        halfwidths, initial_params, log_likelihood, params_from_dict)
from jndvqa.simulator import SimulationConfig, simulate_dataset

from oracles import fd_derivatives, loglik_ld, max_relative_error, random_point

# mean |delta y_c| after deleting 10% of cells, 10 contents, seeds 0..9 (recorded run)
MISSING_SHIFT_ORACLE = {10: 2.2378723, 160: 0.7443527}


def simulated(n_c, n_s, seed, **kw):
    kw = {"content_sigma": 0.02, "subject_sigma": 0.05, "subject_mu_spread": 0.05, **kw}
    gen = make_generative_params(n_c, n_s, **kw)
    return simulate_dataset(SimulationConfig(gen, n_c, n_s, seed=seed))[0]


class TestLogLikelihood:
    def test_perfect_fit_unit_variance(self, additive_2x2):
        s = np.sqrt(0.5)
        p = ModelParams([15.0, 25.0], [s, s], [-5.0, 5.0], [s, s])
        assert log_likelihood(p, additive_2x2) == pytest.approx(-3.675754, abs=1e-6)

    def test_matches_density_sum(self):
        rng = np.random.default_rng(5)
        obs = Observations(("a", "b", "c"), ("s", "t", "u"), rng.uniform(10, 45, (3, 3)))
        p = random_point(rng, obs)
        mpmath.mp.dps = 30
        total = mpmath.mpf(0)
        for c in range(3):
            for s in range(3):
                sd = mpmath.sqrt(mpmath.mpf(p.v_c[c]) ** 2 + mpmath.mpf(p.v_s[s]) ** 2)
                mean = mpmath.mpf(p.y_c[c]) + mpmath.mpf(p.b_s[s])
                total += mpmath.log(mpmath.npdf(mpmath.mpf(obs.scores[c, s]), mean, sd))
        assert log_likelihood(p, obs) == pytest.approx(float(total), rel=1e-12)

    def test_missing_cells_ignored(self):
        obs = Observations(("a", "b", "c"), ("s", "t", "u"),
                           [[20, 25, np.nan], [30, 31, 32], [26, 27, 29]])
        p = ModelParams([22.0, 31.0, 27.0], [1.0, 2.0, 1.5], [0.0, 1.0, -1.0], [1.0, 1.0, 1.0])
        ref = loglik_ld(np.nan_to_num(obs.scores), obs.mask, p.y_c, p.b_s, p.v_c, p.v_s)
        assert log_likelihood(p, obs) == pytest.approx(float(ref), rel=1e-13)

    def test_gauge_invariance(self):
        obs = simulated(6, 8, 1)
        p = random_point(np.random.default_rng(0), obs)
        q = ModelParams(p.y_c - 3.7, p.v_c, p.b_s + 3.7, p.v_s)
        assert log_likelihood(q, obs) == pytest.approx(log_likelihood(p, obs), rel=1e-13)

    def test_dimension_mismatch(self, additive_2x2):
        with pytest.raises(ValueError):
            log_likelihood(ModelParams([1.0] * 3, [1.0] * 3, [0.0] * 2, [1.0] * 2), additive_2x2)


class TestDerivatives:
    def test_random_points_against_finite_differences(self):
        obs = simulated(5, 6, 3)
        rng = np.random.default_rng(1)
        for _ in range(10):
            p = random_point(rng, obs)
            d = derivatives(p, obs)
            g, h = fd_derivatives(p, obs.scores, obs.mask)
            assert max_relative_error(d.grad, g) < 1e-5
            assert max_relative_error(d.curv, h) < 1e-5

    def test_two_by_two_hand_sums(self, additive_2x2):
        # every cell variance is 2; residuals at this point are (+1, +1, +1, +1)
        p = ModelParams([14.0, 24.0], [1.0, 1.0], [-5.0, 5.0], [1.0, 1.0])
        d = derivatives(p, additive_2x2)
        np.testing.assert_allclose(d.grad["y_c"], [1.0, 1.0])
        np.testing.assert_allclose(d.curv["y_c"], [-1.0, -1.0])
        # dL/dv = v * sum(r^2/var^2 - 1/var) = 2 * (1/4 - 1/2) = -0.5
        np.testing.assert_allclose(d.grad["v_c"], [-0.5, -0.5])
        # d2L/dv2 = sum[(q - w) - 2 v^2 (2 q w - w^2)], q = 1/4, w = 1/2 -> 2 * (-0.25 - 0) = -0.5
        np.testing.assert_allclose(d.curv["v_s"], [-0.5, -0.5])

    def test_scaled_objective_gives_same_newton_step(self):
        obs = simulated(4, 5, 2)
        p = random_point(np.random.default_rng(9), obs)
        d = derivatives(p, obs)
        for k in (0.25, 7.0):
            g, h = fd_derivatives(p, obs.scores, obs.mask)
            for name in d.grad:
                np.testing.assert_allclose((k * g[name]) / (k * h[name]),
                                           d.grad[name] / d.curv[name], rtol=1e-5)


class TestFit:
    def test_additive_two_by_two(self, additive_2x2):
        r = fit(additive_2x2)
        assert r.converged
        np.testing.assert_allclose(r.params.y_c, [15, 25], atol=1e-6)
        np.testing.assert_allclose(r.params.b_s, [-5, 5], atol=1e-6)
        np.testing.assert_allclose(np.r_[r.params.v_c, r.params.v_s], 1e-2)

    def test_constant_matrix(self):
        obs = Observations(("a", "b", "c"), ("s", "t"), np.full((3, 2), 25.0))
        r = fit(obs)
        assert r.converged
        np.testing.assert_allclose(r.params.y_c, 25.0, atol=1e-9)
        np.testing.assert_allclose(r.params.b_s, 0.0, atol=1e-9)
        np.testing.assert_allclose(np.r_[r.params.v_c, r.params.v_s], 1e-2)

    def test_starts_from_mos(self):
        obs = simulated(6, 9, 4)
        np.testing.assert_array_equal(initial_params(obs).y_c, mos_estimate(obs).mean)

    @pytest.mark.parametrize("floor", [1e-2, 1.0])
    def test_beats_dense_grid(self, floor):
        rng = np.random.default_rng(3)
        y = 30 + rng.normal(0, 3, (3, 1)) + rng.normal(0, 3, (1, 3)) + rng.normal(0, 2, (3, 3))
        obs = Observations(("a", "b", "c"), ("s", "t", "u"), y)
        r = fit(obs, FitConfig(variance_floor=floor))
        assert r.converged
        best = self._grid_best(obs, r.params, floor, np.random.default_rng(0))
        assert r.loglik >= best - 1e-9

    @staticmethod
    def _grid_best(obs, at, floor, rng):
        """Best likelihood over 0.1 QP lattice points: axis scans around ``at``
        plus 200k random lattice points in a box around the MOS solution."""
        y = obs.scores
        mos = np.nanmean(y, axis=1)
        theta0 = np.round(np.r_[at.y_c, at.b_s, at.v_c, at.v_s], 1)
        cands = [theta0]
        steps = np.arange(-50, 51) * 0.1
        for i in range(12):
            block = np.repeat(theta0[None], steps.size, axis=0)
            block[:, i] += steps
            cands.append(block)
        n = 200_000
        box = np.column_stack([
            np.round(mos[None] + rng.uniform(-5, 5, (n, 3)), 1),
            np.round(rng.uniform(-5, 5, (n, 3)), 1),
            np.round(rng.uniform(floor, 8, (n, 6)), 1),
        ])
        pts = np.vstack([np.atleast_2d(c) for c in cands] + [box])
        pts[:, 6:] = np.maximum(pts[:, 6:], floor)
        y_c, b_s, v_c, v_s = pts[:, :3], pts[:, 3:6], pts[:, 6:9], pts[:, 9:]
        var = v_c[:, :, None] ** 2 + v_s[:, None, :] ** 2
        r = y[None] - y_c[:, :, None] - b_s[:, None, :]
        ll = (-0.5 * np.log(2 * np.pi * var) - 0.5 * r * r / var).sum(axis=(1, 2))
        return float(ll.max())

    def test_trace_monotone_and_gauge(self):
        for seed in range(4):
            r = fit(simulated(8, 12, seed))
            assert np.all(np.diff(r.loglik_trace) >= -1e-9)
            assert abs(r.params.b_s.sum()) < 1e-9

    def test_not_converged_flagged(self):
        r = fit(simulated(8, 12, 0), FitConfig(max_iterations=1))
        assert not r.converged and r.iterations == 1
        with pytest.raises(EstimationError):
            confidence_intervals(r)

    def test_without_backtracking_still_fits_additive(self, additive_2x2):
        r = fit(additive_2x2, FitConfig(backtracking=False))
        np.testing.assert_allclose(r.params.y_c, [15, 25], atol=1e-6)

    def test_restarts_never_worse(self):
        obs = simulated(8, 12, 6)
        one = fit(obs)
        many = fit(obs, FitConfig(restarts=4, seed=1))
        assert many.loglik >= one.loglik
        again = fit(obs, FitConfig(restarts=4, seed=1))
        np.testing.assert_array_equal(many.params.y_c, again.params.y_c)

    def test_config_validation(self):
        for bad in ({"tolerance": 0}, {"variance_floor": -1}, {"max_iterations": 0},
                    {"restarts": 0}):
            with pytest.raises(ValueError):
                FitConfig(**bad)

    def test_missing_data_shift_bounded_and_shrinking(self):
        def drop(obs, rng):
            scores = np.array(obs.scores)
            scores[rng.random(obs.shape) < 0.10] = np.nan
            return Observations(obs.contents, obs.subjects, scores)

        means = {}
        for n_s in MISSING_SHIFT_ORACLE:
            shifts = []
            for seed in range(10):
                obs = simulated(10, n_s, seed)
                a, b = fit(obs), fit(drop(obs, np.random.default_rng(seed)))
                shifts.append(np.mean(np.abs(a.params.y_c - b.params.y_c)))
            means[n_s] = float(np.mean(shifts))
            assert means[n_s] <= 2 * MISSING_SHIFT_ORACLE[n_s]
        assert means[160] < means[10]


class TestIntervals:
    @staticmethod
    def _homogeneous(n_s, sigma):
        rng = np.random.default_rng(0)
        obs = Observations(("a", "b"), tuple(f"s{j}" for j in range(n_s)),
                           rng.uniform(20, 40, (2, n_s)))
        v = sigma / np.sqrt(2)
        return ModelParams([30.0, 30.0], [v, v], np.zeros(n_s), np.full(n_s, v)), obs

    def test_location_halfwidth(self):
        p, obs = self._homogeneous(16, 4.0)
        np.testing.assert_allclose(halfwidths(p, obs)["y_c"], 1.96 * 4.0 / 4.0)

    def test_doubling_subjects_shrinks_by_sqrt2(self):
        a = halfwidths(*self._homogeneous(10, 3.0))["y_c"]
        b = halfwidths(*self._homogeneous(20, 3.0))["y_c"]
        np.testing.assert_allclose(a / b, np.sqrt(2))

    def test_simulated_halfwidths_positive(self, sim_15x37):
        r = fit(sim_15x37[0])
        assert r.converged
        ci = confidence_intervals(r, allow_unavailable=True)
        est, hw = ci["y_c"]
        assert np.all(np.isfinite(hw)) and np.all(hw > 0)
        assert est.shape == (15,)

    def test_unavailable_interval(self, additive_2x2):
        r = fit(additive_2x2)
        bad = {**r.ci_halfwidth, "v_c": np.array([np.nan, 1.0])}
        broken = type(r)(r.params, bad, r.loglik_trace, r.iterations, r.converged)
        with pytest.raises(EstimationError, match="v_c"):
            confidence_intervals(broken)
        assert np.isnan(confidence_intervals(broken, allow_unavailable=True)["v_c"][1][0])


class TestSerialization:
    def test_roundtrip(self, sim_15x37):
        r = fit(sim_15x37[0])
        doc = json.loads(json.dumps(r.to_dict()))
        assert doc["method"] == "mle" and doc["converged"] is True
        assert doc["kappa_context"]["kappa"] == 50.203125
        assert len(doc["loglik"]) == r.iterations + 1
        p = params_from_dict(doc)
        np.testing.assert_array_equal(p.b_s, r.params.b_s)
        assert p.subjects == r.params.subjects

    def test_rejects_mos_document(self):
        with pytest.raises(ValueError):
            params_from_dict({"method": "mos", "contents": []})

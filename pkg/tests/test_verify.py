import math

import numpy as np
import pytest

from boundlab.design import build_tv_system, empirical_norm, evaluate, make_lad_instance
from boundlab.verify import (
    compute_bound_parameters,
    coverage_study,
    default_rate_family,
    rate_study,
    run_coverage_trial,
    convexity_shrink,
)

from conftest import WORKERS


def reference_params(m=24, n=10000):
    return compute_bound_parameters(
        0.5, None, m, n, 3.0, 1.0, lambda big_m: 1.0, lambda_n0=0.05
    )


def random_branch1_params(rng):
    while True:
        s = float(rng.uniform(0.25, 0.75))
        c = float(rng.uniform(3.0, 6.0))
        i_star = float(rng.uniform(0.2, 4.0))
        sigma = float(rng.uniform(0.6, 2.0))
        lam0 = float(rng.uniform(1e-4, 0.05))
        params = compute_bound_parameters(
            s, None, 64, 4096, c, i_star, lambda big_m: sigma, lambda_n0=lam0
        )
        if params.first_branch_active:
            return params


class TestBoundParameters:
    def test_reference_fixture_values(self):
        p = reference_params()
        assert p.big_m_n == pytest.approx(2.0**1.5 * 27.0**-0.5 * 9.0, rel=1e-12)
        assert p.big_m_n == pytest.approx(4.899, abs=1e-3)
        assert p.eps_n == pytest.approx(2.0746, abs=1e-4)
        assert p.lambda_n == pytest.approx(0.15, rel=1e-12)
        assert p.regime_value == pytest.approx(180.0 / 13.5**1.5, rel=1e-12)
        assert p.regime_ok
        assert 1.0 - p.success_prob == pytest.approx(1.51e-13, rel=0.01)

    def test_condition_needs_m_at_least_19(self):
        assert not reference_params(m=18).regime_ok
        assert reference_params(m=19).regime_ok

    def test_preconditions(self):
        with pytest.raises(ValueError):
            compute_bound_parameters(0.5, None, 24, 100, 2.9, 1.0, lambda m: 1.0, lambda_n0=0.05)
        with pytest.raises(ValueError):
            compute_bound_parameters(1.0, None, 24, 100, 3.0, 1.0, lambda m: 1.0, lambda_n0=0.05)
        with pytest.raises(ValueError):
            compute_bound_parameters(0.5, None, 24, 100, 3.0, 0.0, lambda m: 1.0, lambda_n0=0.05)
        with pytest.raises(ValueError):
            compute_bound_parameters(0.5, None, 24, 100, 3.0, 1.0, lambda m: 1.0)

    def test_lemma_rate_default(self):
        from boundlab.epl import increment_rate

        p = compute_bound_parameters(0.5, 1.0, 32, 4096, 3.0, 1.0, lambda m: 1.0)
        assert p.lambda_n0 == pytest.approx(increment_rate(1.0, 32, 4096), rel=1e-12)

    def test_identities_on_reference(self):
        p = reference_params()
        lhs, rhs = p.increment_term_identity()
        assert lhs == pytest.approx(rhs, rel=1e-9)
        lhs, rhs = p.penalty_term_identity()
        assert lhs == pytest.approx(rhs, rel=1e-9)

    def test_identities_random_branch1(self, rng):
        for _ in range(30):
            p = random_branch1_params(rng)
            lhs, rhs = p.increment_term_identity()
            assert lhs == pytest.approx(rhs, rel=1e-9)
            lhs, rhs = p.penalty_term_identity()
            assert lhs == pytest.approx(rhs, rel=1e-9)

    def test_regime_ratio_when_condition_holds(self, rng):
        # eps_n / M_n within [8/m, 1] whenever the regime condition passes
        found = 0
        while found < 20:
            p = random_branch1_params(rng)
            if not p.regime_ok:
                continue
            found += 1
            ratio = p.eps_n / p.big_m_n
            assert ratio <= 1.0 + 1e-12
            assert ratio >= 8.0 / p.m - 1e-12

    def test_success_prob_matches_tail_formula_on_branch1(self, rng):
        for _ in range(10):
            p = random_branch1_params(rng)
            tail = math.exp(-p.n * p.eps_n**2 / (2.0 * (27.0 * p.sigma_n_sq) ** 2))
            assert 1.0 - p.success_prob == pytest.approx(tail, rel=1e-9)


class TestShrink:
    def test_identity_at_target(self, tv_8_4):
        f = evaluate(tv_8_4, np.array([0.3, 0.0, 0.0, 0.0]))
        res = convexity_shrink(f, f, 0.0, 1.0, 1.0)
        assert res.t == 1.0
        assert np.array_equal(res.f_tilde, f)

    def test_third_at_radii(self):
        f_star = np.zeros(4)
        f_hat = np.full(4, 0.5)  # empirical norm 0.5
        res = convexity_shrink(f_hat, f_star, 2.0, 0.5, 2.0)
        assert res.t == pytest.approx(1.0 / 3.0, rel=1e-12)

    def test_shrunk_point_strictly_inside(self, rng):
        for _ in range(200):
            n = 16
            f_star = rng.normal(size=n)
            f_hat = f_star + rng.normal(size=n) * rng.uniform(0, 3)
            i_diff = float(rng.uniform(0, 5))
            eps, big_m = float(rng.uniform(0.1, 2)), float(rng.uniform(0.1, 5))
            res = convexity_shrink(f_hat, f_star, i_diff, eps, big_m)
            assert empirical_norm(res.f_tilde - f_star) < eps
            assert res.t * i_diff < big_m

    def test_implication_randomized(self, rng):
        # small shrunk radii force small raw radii: no counterexamples
        checked = 0
        for _ in range(3000):
            n = 8
            f_star = rng.normal(size=n)
            f_hat = f_star + rng.normal(size=n) * rng.uniform(0, 2)
            i_diff = float(rng.uniform(0, 4))
            eps, big_m = float(rng.uniform(0.1, 2)), float(rng.uniform(0.1, 4))
            res = convexity_shrink(f_hat, f_star, i_diff, eps, big_m)
            if empirical_norm(res.f_tilde - f_star) <= eps / 3.0 and res.t * i_diff <= big_m / 3.0:
                checked += 1
                assert empirical_norm(f_hat - f_star) <= eps + 1e-12
                assert i_diff <= big_m + 1e-12
        assert checked > 100  # the premise fires often enough to mean something


@pytest.fixture(scope="module")
def small_fixture():
    m, n = 24, 256
    system = build_tv_system(n, m)
    theta_star = np.zeros(m)
    theta_star[0] = 1.0
    instance = make_lad_instance(system, theta_star, 1.0, seed=17)
    params = compute_bound_parameters(
        0.5, None, m, n, 3.0, 1.0, lambda big_m: 1.0, lambda_n0=0.05
    )
    return instance, params


class TestTrialAndCoverage:
    def test_trial_reproducible(self, small_fixture):
        instance, params = small_fixture
        a = run_coverage_trial(instance, params, seed=4, index=0)
        b = run_coverage_trial(instance, params, seed=4, index=0)
        assert a == b

    def test_near_noiseless_flags_pass(self):
        m, n = 24, 256
        system = build_tv_system(n, m)
        theta_star = np.zeros(m)
        theta_star[0] = 1.0
        instance = make_lad_instance(system, theta_star, 1e-3, seed=21)
        params = compute_bound_parameters(
            0.5, None, m, n, 3.0, 1.0, lambda big_m: 1.0, lambda_n0=0.05
        )
        rec = run_coverage_trial(instance, params, seed=0, index=0)
        assert rec.ok_norm and rec.ok_l1
        assert rec.err_norm < 0.2

    def test_out_of_regime_marker(self, small_fixture):
        instance, _ = small_fixture
        bad = compute_bound_parameters(
            0.5, None, 18, 256, 3.0, 1.0, lambda big_m: 1.0, lambda_n0=0.05
        )
        rec = run_coverage_trial(instance, bad, seed=0, index=0)
        assert rec.out_of_regime
        assert math.isnan(rec.err_norm)

    def test_coverage_replication_floor(self, small_fixture):
        instance, params = small_fixture
        with pytest.raises(ValueError):
            coverage_study(instance, params, 99, seed=0)

    def test_coverage_small_run(self, small_fixture):
        instance, params = small_fixture
        report = coverage_study(instance, params, 100, seed=5, workers=WORKERS)
        assert report.passed
        assert report.coverage_norm == 1.0 and report.coverage_l1 == 1.0
        assert report.n_failed == 0
        assert len(report.trials) == 100

    def test_coverage_worker_invariance(self, small_fixture):
        instance, params = small_fixture
        a = coverage_study(instance, params, 100, seed=5, workers=1)
        b = coverage_study(instance, params, 100, seed=5, workers=WORKERS)
        assert a.trials == b.trials

    def test_vacuous_flag(self):
        # large target scale and rate: the l1 radius exceeds what any
        # minimizer of the penalized objective could reach
        m, n = 24, 256
        system = build_tv_system(n, m)
        theta_star = np.zeros(m)
        theta_star[0] = 4.0
        instance = make_lad_instance(system, theta_star, 1.0, seed=23)
        params = compute_bound_parameters(
            0.5, None, m, n, 3.0, 4.0, lambda big_m: 1.0, lambda_n0=0.5
        )
        assert params.regime_ok
        report = coverage_study(instance, params, 100, seed=5, workers=WORKERS)
        assert report.vacuous_l1


class TestRateStudy:
    def test_grid_validation(self):
        family = default_rate_family(0.5, 8, 3.0, 1.0)
        with pytest.raises(ValueError):
            rate_study(0.5, family, [128, 256, 512], 4, seed=0)
        with pytest.raises(ValueError):
            rate_study(0.5, family, [128, 192, 256, 384], 4, seed=0)

    def test_analytic_slope_small_run(self):
        family = default_rate_family(0.5, 8, 3.0, 1.0, lambda_scale=0.25)
        study = rate_study(0.5, family, [64, 128, 256, 640], 4, seed=3, workers=WORKERS)
        assert study.slope_analytic == pytest.approx(-1.0 / 3.0, abs=0.02)

    def test_exponent_for_other_s(self):
        # closед-form exponent: -1 / (2 (2 - s))
        assert -1.0 / (2.0 * (2.0 - 0.8)) == pytest.approx(-0.4167, abs=1e-4)

    def test_analytic_slope_is_exact_on_first_branch(self):
        family = default_rate_family(0.5, 8, 3.0, 1.0, lambda_scale=0.25)
        for n in (64, 640):
            _, params = family(n)
            assert params.first_branch_active

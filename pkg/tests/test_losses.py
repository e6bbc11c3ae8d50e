import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit

from boundlab.design import build_tv_system, evaluate, make_lad_instance, make_logistic_instance
from boundlab.losses import (
    AbsoluteLoss,
    LogisticLoss,
    empirical_risk,
    loss_for,
    margin_sigma,
    population_risk,
    sample_responses,
)

from oracles import lad_uniform_population_risk_quadrature


class TestLipschitzAndConvexity:
    @given(
        st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5),
        st.sampled_from([(-1.0,), (1.0,), (0.3,)]),
    )
    @settings(max_examples=300, deadline=None)
    def test_lipschitz_both_losses(self, a1, a2, y_lad, y_logit):
        lad = AbsoluteLoss(1.0)
        assert abs(
            lad.value(np.array([a1]), np.array([y_lad]))
            - lad.value(np.array([a2]), np.array([y_lad]))
        )[0] <= abs(a1 - a2) + 1e-12
        logit = LogisticLoss()
        y = 1.0 if y_logit[0] > 0 else -1.0
        assert abs(
            logit.value(np.array([a1]), np.array([y]))
            - logit.value(np.array([a2]), np.array([y]))
        )[0] <= abs(a1 - a2) + 1e-12

    @given(st.floats(-4, 4), st.floats(-4, 4), st.floats(0, 1))
    @settings(max_examples=300, deadline=None)
    def test_midpoint_convexity(self, a1, a2, w):
        mid = w * a1 + (1 - w) * a2
        for loss, y in ((AbsoluteLoss(1.0), 0.3), (LogisticLoss(), 1.0)):
            lhs = loss.value(np.array([mid]), np.array([y]))[0]
            rhs = (
                w * loss.value(np.array([a1]), np.array([y]))[0]
                + (1 - w) * loss.value(np.array([a2]), np.array([y]))[0]
            )
            assert lhs <= rhs + 1e-10


class TestEmpiricalRisk:
    def test_exact_fit_zero(self, tv_8_4):
        theta = np.array([0.5, 0.0, 0.25, 0.0])
        y = evaluate(tv_8_4, theta)
        assert empirical_risk(AbsoluteLoss(1.0), tv_8_4, theta, y) == 0.0

    def test_constant_residual(self, tv_8_4):
        theta = np.zeros(4)
        y = np.full(8, 0.37)
        assert empirical_risk(AbsoluteLoss(1.0), tv_8_4, theta, y) == pytest.approx(0.37)

    def test_logistic_at_zero_is_log_two(self, tv_8_4, rng):
        y = np.where(rng.uniform(size=8) < 0.5, 1.0, -1.0)
        val = empirical_risk(LogisticLoss(), tv_8_4, np.zeros(4), y)
        assert val == pytest.approx(math.log(2.0), rel=1e-12)

    def test_dimension_mismatch(self, tv_8_4):
        with pytest.raises(ValueError):
            empirical_risk(AbsoluteLoss(1.0), tv_8_4, np.zeros(4), np.zeros(5))


class TestPopulationRisk:
    def test_lad_at_target_is_half_width(self, tv_256_16):
        theta_star = np.r_[1.0, np.zeros(15)]
        loss = AbsoluteLoss(1.0)
        val = population_risk(loss, tv_256_16, theta_star, theta_star)
        assert val == pytest.approx(0.5, rel=1e-12)

    def test_lad_quadrature_oracle(self, rng):
        loss = AbsoluteLoss(0.8)
        for _ in range(20):
            a = float(rng.uniform(-2, 2))
            f_star = float(rng.uniform(-1, 1))
            closed = loss.pointwise_population_risk(np.array([a]), np.array([f_star]))[0]
            quadr = lad_uniform_population_risk_quadrature(a, f_star, 0.8)
            assert closed == pytest.approx(quadr, abs=1e-9)

    def test_lad_excess_quadratic_inside(self):
        # pointwise offset d <= b has excess risk exactly d^2 / (2 b)
        loss = AbsoluteLoss(1.0)
        for d in (0.15, 0.6, 0.99):
            a = np.array([0.3 + d])
            fs = np.array([0.3])
            excess = loss.pointwise_population_risk(a, fs) - loss.pointwise_population_risk(fs, fs)
            assert excess[0] == pytest.approx(d * d / 2.0, rel=1e-12)

    def test_logistic_target_is_pointwise_minimizer(self):
        loss = LogisticLoss()
        f_star = np.array([0.7])
        base = loss.pointwise_population_risk(f_star, f_star)[0]
        for a in np.linspace(-2, 2, 41):
            val = loss.pointwise_population_risk(np.array([a]), f_star)[0]
            assert val >= base - 1e-12

    def test_logistic_population_grad_zero_at_target(self):
        loss = LogisticLoss()
        f_star = np.array([-0.9, 0.0, 1.3])
        g = loss.pointwise_population_risk_grad(f_star, f_star)
        assert np.allclose(g, 0.0, atol=1e-15)


class TestSampling:
    def test_lad_sample_range(self, tv_256_16):
        inst = make_lad_instance(tv_256_16, np.r_[1.0, np.zeros(15)], 0.5, seed=4)
        y = sample_responses(inst, 0)
        f = inst.f_star()
        assert np.all(np.abs(y - f) <= 0.5)

    def test_logistic_sample_labels(self, tv_256_16):
        inst = make_logistic_instance(tv_256_16, np.r_[1.0, np.zeros(15)], seed=4)
        y = sample_responses(inst, 0)
        assert set(np.unique(y)) <= {-1.0, 1.0}

    def test_reproducible_paths(self, tv_256_16):
        inst = make_lad_instance(tv_256_16, np.r_[1.0, np.zeros(15)], 0.5, seed=4)
        assert np.array_equal(sample_responses(inst, 3), sample_responses(inst, 3))
        assert not np.array_equal(sample_responses(inst, 3), sample_responses(inst, 4))

    def test_loss_for_dispatch(self, tv_256_16):
        lad = make_lad_instance(tv_256_16, np.r_[1.0, np.zeros(15)], 0.5, seed=0)
        logit = make_logistic_instance(tv_256_16, np.r_[1.0, np.zeros(15)], seed=0)
        assert isinstance(loss_for(lad), AbsoluteLoss)
        assert isinstance(loss_for(logit), LogisticLoss)


class TestMarginSigma:
    def test_lad_small_ball_value(self, tv_256_16):
        inst = make_lad_instance(tv_256_16, np.r_[1.0, np.zeros(15)], 1.0, seed=0)
        sigma = margin_sigma(AbsoluteLoss(1.0), 0.5, inst)
        assert sigma**2 == pytest.approx(2.0, rel=1e-12)

    def test_lad_large_ball_formula(self, tv_256_16):
        inst = make_lad_instance(tv_256_16, np.r_[1.0, np.zeros(15)], 1.0, seed=0)
        big_m = 3.0
        sigma = margin_sigma(AbsoluteLoss(1.0), big_m, inst)
        assert sigma**2 == pytest.approx(max(2.0, big_m**2 / (big_m - 0.5)), rel=1e-12)

    def test_nondecreasing_in_m(self, tv_256_16):
        lad_inst = make_lad_instance(tv_256_16, np.r_[1.0, np.zeros(15)], 1.0, seed=0)
        logit_inst = make_logistic_instance(tv_256_16, np.r_[1.0, np.zeros(15)], seed=0)
        grid = np.linspace(0.1, 6.0, 25)
        for loss, inst in ((AbsoluteLoss(1.0), lad_inst), (LogisticLoss(), logit_inst)):
            vals = [margin_sigma(loss, m, inst) for m in grid]
            assert all(a <= b + 1e-12 for a, b in zip(vals, vals[1:]))

    def test_randomized_certification(self, rng):
        # 1000 random theta with ||f - f*||_inf <= M must satisfy the margin
        system = build_tv_system(64, 8)
        theta_star = np.r_[0.5, np.zeros(7)]
        big_m = 1.5
        for loss, inst in (
            (AbsoluteLoss(1.0), make_lad_instance(system, theta_star, 1.0, seed=0)),
            (LogisticLoss(), make_logistic_instance(system, theta_star, seed=0)),
        ):
            sigma2 = margin_sigma(loss, big_m, inst) ** 2
            f_star = inst.f_star()
            checked = 0
            while checked < 1000:
                theta = theta_star + rng.uniform(-0.6, 0.6, size=8)
                f = evaluate(system, theta)
                if np.max(np.abs(f - f_star)) > big_m:
                    continue
                checked += 1
                excess = population_risk(loss, system, theta, theta_star) - \
                    population_risk(loss, system, theta_star, theta_star)
                dist_sq = float(np.mean((f - f_star) ** 2))
                assert excess >= dist_sq / sigma2 - 1e-12

    def test_rejects_nonpositive_m(self, tv_256_16):
        inst = make_lad_instance(tv_256_16, np.r_[1.0, np.zeros(15)], 1.0, seed=0)
        with pytest.raises(ValueError):
            margin_sigma(AbsoluteLoss(1.0), 0.0, inst)

    def test_logistic_curvature_constant(self, tv_256_16):
        inst = make_logistic_instance(tv_256_16, np.r_[1.0, np.zeros(15)], seed=0)
        big_m = 1.0
        sigma = margin_sigma(LogisticLoss(), big_m, inst)
        reach = float(np.max(np.abs(inst.f_star()))) + big_m
        c_min = float(expit(reach) * (1.0 - expit(reach)))
        assert sigma**2 == pytest.approx(2.0 / c_min, rel=1e-12)

import numpy as np
import pytest

from boundlab.design import FunctionSystem, gram
from boundlab.projections import (
    EllipsoidProjector,
    project_intersection,
    project_l1,
    scale_into_feasibility,
    sup_over_intersection,
)


class TestL1Projection:
    def test_inside_unchanged(self):
        v = np.array([0.2, -0.3])
        assert np.array_equal(project_l1(v, 1.0), v)

    def test_projection_properties(self, rng):
        for _ in range(50):
            v = rng.normal(0, 2, size=6)
            r = float(rng.uniform(0.1, 2.0))
            p = project_l1(v, r)
            assert np.abs(p).sum() <= r + 1e-12
            # optimality: no strictly closer feasible point among random probes
            for _ in range(10):
                q = project_l1(rng.normal(0, 2, size=6), r)
                assert np.linalg.norm(v - p) <= np.linalg.norm(v - q) + 1e-9

    def test_zero_radius(self):
        assert np.array_equal(project_l1(np.ones(3), 0.0), np.zeros(3))


class TestEllipsoidProjector:
    def test_inside_unchanged(self):
        proj = EllipsoidProjector(np.eye(2))
        v = np.array([0.1, 0.1])
        assert np.array_equal(proj.project(v, 1.0), v)

    def test_ball_case_matches_rescaling(self, rng):
        proj = EllipsoidProjector(np.eye(3))
        v = rng.normal(0, 2, 3)
        p = proj.project(v, 0.5)
        assert np.allclose(p, v * 0.5 / np.linalg.norm(v), atol=1e-12)

    def test_quadratic_satisfied_after_projection(self, rng):
        vals = rng.uniform(-1, 1, size=(4, 12))
        g = gram(FunctionSystem(vals))
        proj = EllipsoidProjector(g)
        for _ in range(20):
            v = rng.normal(0, 3, 4)
            p = proj.project(v, 0.7)
            assert proj.quad(p) <= 0.49 * (1 + 1e-10)

    def test_singular_direction_passes_through(self):
        g = np.diag([1.0, 0.0])
        proj = EllipsoidProjector(g)
        p = proj.project(np.array([3.0, 5.0]), 1.0)
        assert p[1] == pytest.approx(5.0)
        assert abs(p[0]) == pytest.approx(1.0)

    def test_optimality_vs_kkt(self, rng):
        # projection must satisfy x - v + mu G x = 0 for some mu >= 0
        vals = rng.uniform(-1, 1, size=(3, 9))
        g = gram(FunctionSystem(vals))
        proj = EllipsoidProjector(g)
        v = rng.normal(0, 3, 3)
        x = proj.project(v, 0.4)
        resid = v - x
        gx = g @ x
        denom = float(gx @ gx)
        if denom > 1e-14:
            mu = float(resid @ gx) / denom
            assert mu >= -1e-9
            assert np.allclose(resid, mu * gx, atol=1e-8)


class TestIntersection:
    def test_feasible_point_near_input_when_inside(self, rng):
        g = gram(FunctionSystem(rng.uniform(-1, 1, (3, 8))))
        proj = EllipsoidProjector(g)
        v = np.zeros(3)
        out = project_intersection(v, proj, 0.5, 1.0)
        assert np.allclose(out, 0.0, atol=1e-9)

    def test_projection_in_both_sets(self, rng):
        g = gram(FunctionSystem(rng.uniform(-1, 1, (4, 10))))
        proj = EllipsoidProjector(g)
        for _ in range(10):
            v = rng.normal(0, 2, 4)
            out = project_intersection(v, proj, 0.3, 0.8)
            assert np.sqrt(proj.quad(out)) <= 0.3 + 1e-8
            assert np.abs(out).sum() <= 0.8 + 1e-8

    def test_matches_single_set_when_other_slack(self, rng):
        proj = EllipsoidProjector(np.eye(2))
        v = np.array([5.0, 0.0])
        # l1 radius huge: intersection projection = ball projection
        out = project_intersection(v, proj, 1.0, 100.0)
        assert np.allclose(out, [1.0, 0.0], atol=1e-8)

    def test_scale_into_feasibility_exact(self, rng):
        g = gram(FunctionSystem(rng.uniform(-1, 1, (3, 8))))
        proj = EllipsoidProjector(g)
        for _ in range(20):
            theta = rng.normal(0, 5, 3)
            out = scale_into_feasibility(theta, proj, 0.4, 0.9)
            assert np.sqrt(proj.quad(out)) <= 0.4
            assert np.abs(out).sum() <= 0.9


class TestSupOverIntersection:
    def test_zero_direction(self):
        proj = EllipsoidProjector(np.eye(2))
        val, theta = sup_over_intersection(np.zeros(2), proj, 1.0, 1.0)
        assert val == 0.0 and np.array_equal(theta, np.zeros(2))

    def test_returned_point_feasible_and_consistent(self, rng):
        g = gram(FunctionSystem(rng.uniform(-1, 1, (4, 10))))
        proj = EllipsoidProjector(g)
        xi = rng.normal(0, 1, 4)
        val, theta = sup_over_intersection(xi, proj, 0.5, 1.2)
        assert np.sqrt(proj.quad(theta)) <= 0.5 + 1e-12
        assert np.abs(theta).sum() <= 1.2 + 1e-12
        assert val == pytest.approx(float(xi @ theta), rel=1e-12, abs=1e-12)

    def test_invalid_radii(self):
        proj = EllipsoidProjector(np.eye(2))
        with pytest.raises(ValueError):
            sup_over_intersection(np.ones(2), proj, 0.0, 1.0)
        with pytest.raises(ValueError):
            sup_over_intersection(np.ones(2), proj, 1.0, -1.0)

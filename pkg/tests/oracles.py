"""Independent brute-force oracles used by the test suite.

Everything here recomputes quantities by exhaustive or generic numerical
methods (grids, subset enumeration, quadrature, conic programming),
deliberately sharing no code path with the implementations under test.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.integrate import quad


def exact_covering_number(distances: np.ndarray, eps: float) -> int:
    """Minimal number of eps-balls centered at points covering all points.

    Subset exhaustion; only sensible for very small point sets.
    """
    m = distances.shape[0]
    covered = distances <= eps
    for size in range(1, m + 1):
        for centers in itertools.combinations(range(m), size):
            if np.all(covered[list(centers), :].any(axis=0)):
                return size
    return m


def grid_sup_base(
    gram: np.ndarray,
    xi: np.ndarray,
    eps: float,
    big_m: float,
    step: float,
    box: float | None = None,
) -> float:
    """Max of ``|xi @ theta|`` over the feasible grid (chunked dense scan)."""
    m = len(xi)
    b = big_m if box is None else box
    ax = np.arange(-b, b + step / 2.0, step)
    best = 0.0
    if m == 1:
        th = ax[:, None]
        quad_vals = gram[0, 0] * ax**2
        feas = (quad_vals <= eps**2) & (np.abs(ax) <= big_m)
        if feas.any():
            best = float(np.max(np.abs(ax[feas] * xi[0])))
        return best
    if m == 2:
        t1, t2 = np.meshgrid(ax, ax, indexing="ij")
        th = np.stack([t1.ravel(), t2.ravel()], axis=1)
        quad_vals = np.einsum("ij,jk,ik->i", th, gram, th)
        feas = (quad_vals <= eps**2) & (np.abs(th).sum(axis=1) <= big_m)
        if feas.any():
            best = float(np.max(np.abs(th[feas] @ xi)))
        return best
    if m == 3:
        for t1 in ax:
            t2, t3 = np.meshgrid(ax, ax, indexing="ij")
            th = np.stack([np.full(t2.size, t1), t2.ravel(), t3.ravel()], axis=1)
            quad_vals = np.einsum("ij,jk,ik->i", th, gram, th)
            feas = (quad_vals <= eps**2) & (np.abs(th).sum(axis=1) <= big_m)
            if feas.any():
                best = max(best, float(np.max(np.abs(th[feas] @ xi))))
        return best
    raise ValueError("grid oracle supports m <= 3")


def cvxpy_sup_base(gram: np.ndarray, xi: np.ndarray, eps: float, big_m: float) -> float:
    """Conic-programming value of the constrained supremum."""
    import cvxpy as cp

    theta = cp.Variable(len(xi))
    problem = cp.Problem(
        cp.Maximize(xi @ theta),
        [cp.quad_form(theta, cp.psd_wrap(gram)) <= eps**2, cp.norm1(theta) <= big_m],
    )
    problem.solve(solver=cp.CLARABEL)
    if problem.status != "optimal":
        raise RuntimeError(f"oracle solve ended with status {problem.status}")
    return float(problem.value)


def _grid_axes(bound: float, step: float) -> np.ndarray:
    return np.arange(-bound, bound + step / 2.0, step)


def grid_min_objective(objective, m: int, bound: float, step: float) -> float:
    """Min of a vectorized objective(theta-matrix) over the full grid cube.

    ``objective`` maps an (N, m) array of coefficient rows to N values.
    """
    ax = _grid_axes(bound, step)
    if m == 1:
        return float(np.min(objective(ax[:, None])))
    if m == 2:
        t1, t2 = np.meshgrid(ax, ax, indexing="ij")
        th = np.stack([t1.ravel(), t2.ravel()], axis=1)
        return float(np.min(objective(th)))
    if m == 3:
        best = np.inf
        t2, t3 = np.meshgrid(ax, ax, indexing="ij")
        tail = np.stack([t2.ravel(), t3.ravel()], axis=1)
        for t1 in ax:
            th = np.concatenate([np.full((tail.shape[0], 1), t1), tail], axis=1)
            best = min(best, float(np.min(objective(th))))
        return best
    raise ValueError("grid oracle supports m <= 3")


def batched_lad_risk(values: np.ndarray, y: np.ndarray, thetas: np.ndarray) -> np.ndarray:
    """Empirical absolute-loss risk for every row of ``thetas``."""
    fhat = thetas @ values
    return np.abs(y[None, :] - fhat).mean(axis=1)


def lad_uniform_population_risk_quadrature(
    a: float, f_star: float, half_width: float
) -> float:
    """``E |f_star + U - a|`` by adaptive quadrature over the noise law."""
    b = half_width
    val, _ = quad(lambda u: abs(f_star + u - a) / (2.0 * b), -b, b, limit=200)
    return val

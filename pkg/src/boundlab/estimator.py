"""The adaptive l1 estimator and its lasso-path solver.

The estimated objective is ``empirical risk + lambda_n^{2/(2-s)}
I(theta)^{2(1-s)/(2-s)}``.  The penalty is concave in the l1 norm, so the
problem is not jointly convex; but the penalty is the lower envelope of
the affine family ``lambda I + C(lambda_n, s) / lambda^{2(1-s)/s}``, so
minimizing the true objective reduces to sweeping a geometric grid of
plain lasso subproblems (convex) and scoring each solution under the true
objective.  The returned fit is therefore an upper bound on the optimum,
certified exact against brute force on small fixtures; that direction is
the conservative one for every oracle-inequality check built on top.

Lasso subproblems: the absolute loss is solved exactly as a linear
program in dual form (n box variables, 2m rows; the coefficient vector is
read off the constraint multipliers and certified by the duality gap and
a kink-aware subgradient residual); the logistic loss is solved by
proximal gradient with momentum and adaptive restart.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from boundlab.design import FunctionSystem, ell1_norm, evaluate, gram
from boundlab.errors import ConvergenceError
from boundlab.losses import AbsoluteLoss, LossModel, empirical_risk

# ---------------------------------------------------------------------------
# Penalty calculus


def penalty(l1: float, lambda_n: float, s: float) -> float:
    """``lambda_n^{2/(2-s)} * l1^{2(1-s)/(2-s)}``."""
    if not 0 < s < 1:
        raise ValueError(f"s must lie in (0, 1), got {s}")
    if lambda_n <= 0:
        raise ValueError(f"lambda_n must be positive, got {lambda_n}")
    if l1 < 0:
        raise ValueError("l1 norm cannot be negative")
    return lambda_n ** (2.0 / (2.0 - s)) * l1 ** (2.0 * (1.0 - s) / (2.0 - s))


def variational_constant(lambda_n: float, s: float) -> float:
    """The constant C making ``penalty(I) = min_lambda (lambda I + C lambda^{-p})``
    for every I > 0, with ``p = 2(1-s)/s``.

    Closed form ``C = lambda_n^{2/s} p^p / (p+1)^{p+1}``; the test suite
    confirms it against independent scalar minimization before anything
    relies on it.
    """
    if not 0 < s < 1:
        raise ValueError(f"s must lie in (0, 1), got {s}")
    p = 2.0 * (1.0 - s) / s
    return lambda_n ** (2.0 / s) * p**p / (p + 1.0) ** (p + 1.0)


def optimal_lambda(l1: float, lambda_n: float, s: float) -> float:
    """Minimizer of ``lambda * l1 + C * lambda^{-p}``; infinite at l1 = 0."""
    if l1 <= 0:
        return math.inf
    p = 2.0 * (1.0 - s) / s
    c = variational_constant(lambda_n, s)
    return (p * c / l1) ** (1.0 / (p + 1.0))


# ---------------------------------------------------------------------------
# Subgradient certificates


def risk_subgradient_interval(
    loss: LossModel,
    system: FunctionSystem,
    theta: np.ndarray,
    y: np.ndarray,
    kink_tol: Optional[float] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Componentwise interval of valid risk subgradients at ``theta``.

    Smooth losses give a degenerate interval.  For the absolute loss,
    observations within ``kink_tol`` of the kink contribute their full
    subdifferential ``[-1, 1] * psi_k(x_i) / n``.  The default tolerance
    matches LP-solver feasibility (1e-7, scaled by the response size):
    an interpolation residual that small certifies optimality for data
    perturbed by no more, which moves the 1-Lipschitz objective by no
    more either.
    """
    f = evaluate(system, theta)
    y = np.asarray(y, float)
    if isinstance(loss, AbsoluteLoss):
        if kink_tol is None:
            kink_tol = 1e-7 * max(1.0, float(np.max(np.abs(y))))
        r = f - y
        at_kink = np.abs(r) <= kink_tol
        base = np.where(at_kink, 0.0, np.sign(r))
        g = system.values @ base / system.n
        slack = np.abs(system.values[:, at_kink]).sum(axis=1) / system.n
        return g - slack, g + slack
    g = system.values @ loss.dvalue(f, y) / system.n
    return g, g


def subgradient_residual(
    loss: LossModel,
    system: FunctionSystem,
    theta: np.ndarray,
    y: np.ndarray,
    lam: float,
) -> float:
    """Distance of 0 from ``d(risk)(theta) + lam * d|.|_1(theta)`` in sup norm.

    Zero certifies optimality of the lasso subproblem at ``lam``; the
    subgradient of the risk is chosen optimally inside its interval.
    """
    lo, hi = risk_subgradient_interval(loss, system, theta, y)
    theta = np.asarray(theta, float)
    lo_t = np.where(theta > 0, lo + lam, np.where(theta < 0, lo - lam, lo - lam))
    hi_t = np.where(theta > 0, hi + lam, np.where(theta < 0, hi - lam, hi + lam))
    dist = np.maximum(lo_t, 0.0) + np.maximum(-hi_t, 0.0)
    return float(dist.max())


def lambda_deadzone(loss: LossModel, system: FunctionSystem, y: np.ndarray) -> float:
    """Smallest lambda at which theta = 0 solves the lasso subproblem."""
    lo, hi = risk_subgradient_interval(loss, system, np.zeros(system.m), y)
    return float(max(np.max(lo, initial=0.0), np.max(-hi, initial=0.0), 0.0))


# ---------------------------------------------------------------------------
# Lasso subproblems


class SubproblemResult(NamedTuple):
    theta: np.ndarray
    objective: float  # empirical risk + lam * l1
    residual: float
    iterations: int


def lasso_subproblem(
    loss: LossModel,
    system: FunctionSystem,
    y: np.ndarray,
    lam: float,
    tol: float = 1e-6,
    theta0: Optional[np.ndarray] = None,
    max_iter: int = 20000,
) -> SubproblemResult:
    """Minimize ``empirical risk + lam * ||theta||_1`` to residual ``tol``."""
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    y = np.asarray(y, float)
    if y.shape != (system.n,):
        raise ValueError(f"data has shape {y.shape}, expected ({system.n},)")
    if isinstance(loss, AbsoluteLoss):
        return _lad_subproblem_lp(loss, system, y, lam, tol)
    return _smooth_subproblem_fista(loss, system, y, lam, tol, theta0, max_iter)


def _telescoped_eq_matrix(values: np.ndarray) -> Optional[sparse.csc_matrix]:
    # Rewrite t = Psi nu through consecutive row differences:
    #   t_{m-1} = psi_{m-1} nu,   t_k = t_{k+1} + (psi_k - psi_{k+1}) nu.
    # Worth it only when the difference representation is much sparser
    # than the rows themselves (true for step-like dictionaries).
    m, n = values.shape
    if m < 2:
        return None
    diff_nnz = int(np.count_nonzero(np.diff(values, axis=0))) + int(
        np.count_nonzero(values[m - 1])
    )
    if diff_nnz > max(n, int(np.count_nonzero(values)) // 4):
        return None
    data, ri, ci = [], [], []
    for k in range(m):
        data.append(1.0)
        ri.append(k)
        ci.append(n + k)
        if k == m - 1:
            coefs = values[m - 1]
        else:
            data.append(-1.0)
            ri.append(k)
            ci.append(n + k + 1)
            coefs = values[k] - values[k + 1]
        for j in np.flatnonzero(coefs):
            data.append(-float(coefs[j]))
            ri.append(k)
            ci.append(int(j))
    return sparse.csc_matrix((data, (ri, ci)), shape=(m, n + m))


def _lad_lp_telescoped(system: FunctionSystem, y: np.ndarray, lam: float):
    m, n = system.m, system.n
    a_eq = _telescoped_eq_matrix(np.asarray(system.values))
    if a_eq is None:
        return None
    c = np.concatenate([-y, np.zeros(m)])
    bounds = np.empty((n + m, 2))
    bounds[:n, 0] = -1.0 / n
    bounds[:n, 1] = 1.0 / n
    bounds[n:, 0] = -lam
    bounds[n:, 1] = lam
    for options in ({"presolve": False}, None):
        res = linprog(
            c, A_eq=a_eq, b_eq=np.zeros(m), bounds=bounds,
            method="highs", options=options,
        )
        if res.status == 0:
            theta = -(res.upper.marginals[n:] + res.lower.marginals[n:])
            return theta, -float(res.fun), int(res.nit)
    return None


def _lad_lp_direct(system: FunctionSystem, y: np.ndarray, lam: float):
    m, n = system.m, system.n
    rows = sparse.csr_matrix(system.values)
    a_ub = sparse.vstack([rows, -rows]).tocsc()
    res = linprog(
        -y,
        A_ub=a_ub,
        b_ub=np.full(2 * m, lam),
        bounds=[(-1.0 / n, 1.0 / n)] * n,
        method="highs",
    )
    if res.status != 0:
        raise ConvergenceError(f"LAD subproblem LP failed: {res.message}")
    theta = -(res.ineqlin.marginals[:m] - res.ineqlin.marginals[m:])
    return theta, -float(res.fun), int(res.nit)


def _lad_subproblem_lp(
    loss: AbsoluteLoss,
    system: FunctionSystem,
    y: np.ndarray,
    lam: float,
    tol: float,
) -> SubproblemResult:
    # Dual linear program: max y @ nu over |nu_i| <= 1/n, |psi_k @ nu| <= lam;
    # the optimal coefficients are the multipliers of the 2m row constraints.
    # Certified after the fact by the duality gap and the subgradient
    # residual, so the sparse fast path can fall back safely.
    attempts = []
    fast = _lad_lp_telescoped(system, y, lam)
    if fast is not None:
        attempts.append(fast)

    def certify(theta, dual_value, nit) -> Optional[SubproblemResult]:
        obj = empirical_risk(loss, system, theta, y) + lam * ell1_norm(theta)
        gap = obj - dual_value
        if not math.isfinite(gap) or abs(gap) > max(tol, 1e-7 * max(1.0, abs(obj))):
            return None
        residual = subgradient_residual(loss, system, theta, y, lam)
        if residual > tol:
            return None
        return SubproblemResult(theta, float(obj), float(residual), int(nit))

    for attempt in attempts:
        out = certify(*attempt)
        if out is not None:
            return out
    out = certify(*_lad_lp_direct(system, y, lam))
    if out is None:
        raise ConvergenceError(
            f"LAD subproblem failed certification at lam={lam:g} (tol={tol:g})"
        )
    return out


def _smooth_subproblem_fista(
    loss: LossModel,
    system: FunctionSystem,
    y: np.ndarray,
    lam: float,
    tol: float,
    theta0: Optional[np.ndarray],
    max_iter: int,
) -> SubproblemResult:
    # proximal gradient with Nesterov momentum and adaptive restart; the
    # logistic per-point curvature is at most 1/4, so the gradient of the
    # empirical risk is (lambda_max(G) / 4)-Lipschitz
    g_mat = gram(system)
    lip = max(float(np.linalg.eigvalsh(g_mat).max()), 1e-12) / 4.0
    step = 1.0 / lip

    def grad(theta: np.ndarray) -> np.ndarray:
        f = evaluate(system, theta)
        return system.values @ loss.dvalue(f, y) / system.n

    def objective(theta: np.ndarray) -> float:
        return empirical_risk(loss, system, theta, y) + lam * ell1_norm(theta)

    def soft(v: np.ndarray, t: float) -> np.ndarray:
        return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)

    theta = np.zeros(system.m) if theta0 is None else np.asarray(theta0, float).copy()
    z = theta.copy()
    t_mom = 1.0
    best_obj = objective(theta)
    for it in range(1, max_iter + 1):
        theta_new = soft(z - step * grad(z), step * lam)
        t_new = (1.0 + math.sqrt(1.0 + 4.0 * t_mom * t_mom)) / 2.0
        z = theta_new + ((t_mom - 1.0) / t_new) * (theta_new - theta)
        theta, t_mom = theta_new, t_new
        if it % 10 == 0 or it == max_iter:
            obj = objective(theta)
            if obj > best_obj:  # momentum overshoot: restart
                z = theta.copy()
                t_mom = 1.0
            best_obj = min(best_obj, obj)
            residual = subgradient_residual(loss, system, theta, y, lam)
            if residual <= tol:
                return SubproblemResult(
                    theta, objective(theta), float(residual), it
                )
    raise ConvergenceError(
        f"proximal gradient exhausted {max_iter} iterations "
        f"(residual {subgradient_residual(loss, system, theta, y, lam):.3e} > {tol:g})"
    )


# ---------------------------------------------------------------------------
# Full penalized solve


@dataclass(frozen=True)
class FitResult:
    """Solution of the adaptive-penalty problem via the lasso-path sweep."""

    theta_hat: np.ndarray
    objective: float
    lambda_path: Tuple[Tuple[float, float], ...]  # (lambda, inner objective)
    subgradient_residual: float
    iterations: int

    def __post_init__(self) -> None:
        theta = np.asarray(self.theta_hat, dtype=float).copy()
        theta.setflags(write=False)
        object.__setattr__(self, "theta_hat", theta)


def solve_penalized(
    loss: LossModel,
    system: FunctionSystem,
    y: np.ndarray,
    lambda_n: float,
    s: float,
    lambda_grid: Optional[Sequence[float]] = None,
    tol: float = 1e-6,
    grid_ratio: float = 1.1,
    warm_start: bool = True,
) -> FitResult:
    """Minimize ``empirical risk + penalty(I(theta), lambda_n, s)``.

    Default grid: geometric with ratio ``grid_ratio`` from the deadzone
    threshold (where theta = 0 is optimal) downwards; the sweep extends
    until the grid falls below the variational-optimal lambda for the
    largest l1 norm seen so far (with a few extra points of margin), then
    the neighborhood of the best grid point is refined at ratio^(1/4).
    Every candidate is scored under the true concave-penalty objective and
    the best one is returned.

    ``warm_start`` only affects iterative subproblems (initial point along
    the path); the minimizers, and hence the result, agree within ``tol``
    either way.
    """
    if not 0 < s < 1:
        raise ValueError(f"s must lie in (0, 1), got {s}")
    if lambda_n <= 0:
        raise ValueError(f"lambda_n must be positive, got {lambda_n}")
    y = np.asarray(y, float)

    path: list = []
    iterations = 0
    best: Optional[Tuple[float, float, SubproblemResult]] = None  # (true_obj, lam, sub)
    theta_prev: Optional[np.ndarray] = None

    def true_objective(sub: SubproblemResult, lam: float) -> float:
        l1 = ell1_norm(sub.theta)
        return sub.objective - lam * l1 + penalty(l1, lambda_n, s)

    def consider(lam: float) -> SubproblemResult:
        nonlocal iterations, best, theta_prev
        sub = lasso_subproblem(
            loss, system, y, lam, tol=tol,
            theta0=theta_prev if warm_start else None,
        )
        iterations += sub.iterations
        theta_prev = sub.theta
        path.append((float(lam), float(sub.objective)))
        tobj = true_objective(sub, lam)
        if best is None or tobj < best[0]:
            best = (tobj, lam, sub)
        return sub

    if lambda_grid is not None:
        for lam in lambda_grid:
            consider(float(lam))
    else:
        lam_hi = max(lambda_deadzone(loss, system, y), 1e-8)
        lam = lam_hi
        i_max = 0.0
        extra = 0
        for _ in range(500):
            sub = consider(lam)
            i_max = max(i_max, ell1_norm(sub.theta))
            if i_max > 0.0 and lam < optimal_lambda(i_max, lambda_n, s):
                extra += 1
                if extra > 5:
                    break
            if lam < 1e-10 * lam_hi:
                break
            lam /= grid_ratio
        # refine around the best grid point at quarter-ratio spacing
        assert best is not None
        lam_b = best[1]
        for j in (-3, -2, -1, 1, 2, 3):
            consider(lam_b * grid_ratio ** (j / 4.0))

    assert best is not None
    tobj, lam_best, sub_best = best
    return FitResult(
        theta_hat=sub_best.theta,
        objective=float(tobj),
        lambda_path=tuple(path),
        subgradient_residual=float(sub_best.residual),
        iterations=int(iterations),
    )

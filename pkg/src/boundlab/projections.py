"""Euclidean projections onto the l1 ball, a Gram ellipsoid, and
operator-splitting solvers for their intersection.

The Gram ellipsoid ``{theta : theta @ G @ theta <= eps^2}`` may be
degenerate: directions in the kernel of G are unconstrained and pass
through the projection untouched, which is exactly what a highly
correlated (rank-deficient) design produces.  That same correlation makes
the ellipsoid extremely elongated, where plain cyclic projections crawl;
both intersection routines therefore run over-relaxed Douglas-Rachford
splitting, whose iterations cost one ellipsoid and one l1 projection each
and which converges at a geometry-robust rate.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from boundlab.errors import ConvergenceError

_RELAXATION = 1.8
_CHECK_EVERY = 10


def project_l1(v: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection onto ``{x : ||x||_1 <= radius}`` (sort-based)."""
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    v = np.asarray(v, dtype=float)
    if radius == 0:
        return np.zeros_like(v)
    a = np.abs(v)
    if a.sum() <= radius:
        return v.copy()
    u = np.sort(a)[::-1]
    css = np.cumsum(u)
    idx = np.arange(1, v.size + 1)
    rho = np.max(np.flatnonzero(u * idx > css - radius))
    tau = (css[rho] - radius) / (rho + 1.0)
    return np.sign(v) * np.maximum(a - tau, 0.0)


class EllipsoidProjector:
    """Projector onto ``{theta : theta @ G @ theta <= eps^2}`` for PSD G.

    The eigendecomposition of G is done once; each projection then solves
    a monotone scalar equation for the KKT multiplier.  Components along
    zero eigenvalues are unconstrained by the quadratic and are returned
    unchanged.
    """

    def __init__(self, gram_matrix: np.ndarray):
        g = np.asarray(gram_matrix, dtype=float)
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise ValueError("gram matrix must be square")
        evals, evecs = np.linalg.eigh((g + g.T) / 2.0)
        # PSD up to roundoff; tiny negatives are eigensolver noise, not geometry
        tol = max(1.0, float(evals.max(initial=0.0))) * 1e-12
        evals = np.where(evals > tol, evals, 0.0)
        self.evals = evals
        self.evecs = evecs

    def quad(self, theta: np.ndarray) -> float:
        """Value of ``theta @ G @ theta`` evaluated in the eigenbasis."""
        q = self.evecs.T @ theta
        return float(np.sum(self.evals * q * q))

    def project(self, v: np.ndarray, eps: float) -> np.ndarray:
        if eps <= 0:
            raise ValueError("eps must be positive")
        q = self.evecs.T @ np.asarray(v, dtype=float)
        lam = self.evals
        lam_q_sq = lam * q * q
        target = eps * eps

        def quad_at(mu: float) -> float:
            d = 1.0 + mu * lam
            return float(np.sum(lam_q_sq / (d * d)))

        if quad_at(0.0) <= target * (1.0 + 1e-14):
            return np.asarray(v, dtype=float).copy()
        # Newton on 1/sqrt(quad) - 1/eps, which is close to linear in the
        # multiplier (exactly linear for a single eigenvalue); quadratic
        # convergence from 0 with monotone iterates
        mu = 0.0
        converged = False
        for _ in range(80):
            d = 1.0 + mu * lam
            phi = float(np.sum(lam_q_sq / (d * d)))
            root = math.sqrt(phi)
            if abs(root - eps) <= 1e-13 * eps:
                converged = True
                break
            dphi = -2.0 * float(np.sum(lam * lam_q_sq / (d * d * d)))
            g_prime = -dphi / (2.0 * phi * root)
            step = (1.0 / eps - 1.0 / root) / g_prime
            mu_new = mu + step
            if not math.isfinite(mu_new) or mu_new < 0.0:
                break
            mu = mu_new
        if not converged:
            hi = max(2.0 * mu, 1.0)
            while quad_at(hi) > target:
                hi *= 2.0
                if hi > 1e300:
                    raise ConvergenceError(
                        "ellipsoid projection: multiplier bracket blew up"
                    )
            mu = brentq(lambda t: quad_at(t) - target, 0.0, hi, xtol=1e-30, rtol=1e-15)
        return self.evecs @ (q / (1.0 + mu * lam))


def scale_into_feasibility(
    theta: np.ndarray,
    ellipsoid: EllipsoidProjector,
    eps: float,
    l1_radius: float,
) -> np.ndarray:
    """Shrink ``theta`` toward 0 until both constraints hold exactly.

    Both sets are star-shaped around the origin, so a single scalar factor
    suffices; the result is feasible, never merely near-feasible.
    """
    theta = np.asarray(theta, dtype=float)
    scale = 1.0
    quad = np.sqrt(max(ellipsoid.quad(theta), 0.0))
    if quad > eps:
        scale = min(scale, eps / quad)
    l1 = float(np.sum(np.abs(theta)))
    if l1 > l1_radius:
        scale = min(scale, l1_radius / l1)
    out = theta * scale
    # guard against roundoff leaving a hair of infeasibility
    for _ in range(3):
        bad = (
            np.sqrt(max(ellipsoid.quad(out), 0.0)) > eps
            or np.sum(np.abs(out)) > l1_radius
        )
        if not bad:
            break
        out = out * (1.0 - 1e-15)
    return out


def project_intersection(
    v: np.ndarray,
    ellipsoid: EllipsoidProjector,
    eps: float,
    l1_radius: float,
    tol: float = 1e-9,
    max_iters: int = 100000,
) -> np.ndarray:
    """Projection of ``v`` onto the ellipsoid / l1-ball intersection.

    Douglas-Rachford on ``i_E + ||. - v||^2/2`` and ``i_B``: the first
    prox is an ellipsoid projection of a weighted average, the second the
    l1 projection.  Stops when the two half-iterates agree to ``tol``
    (relative to their size); raises :class:`ConvergenceError` past the
    iteration cap rather than returning a silent approximation.
    """
    v = np.asarray(v, dtype=float)
    gamma = 1.0
    z = v.copy()
    for k in range(max_iters):
        x = ellipsoid.project((z + gamma * v) / (1.0 + gamma), eps)
        y = project_l1(2.0 * x - z, l1_radius)
        z = z + _RELAXATION * (y - x)
        if k % _CHECK_EVERY == _CHECK_EVERY - 1:
            gap = float(np.linalg.norm(x - y))
            if gap <= tol * max(1.0, float(np.linalg.norm(x))):
                return scale_into_feasibility((x + y) / 2.0, ellipsoid, eps, l1_radius)
    raise ConvergenceError(
        f"intersection projection did not stabilize within {max_iters} iterations"
    )


def sup_over_intersection(
    direction: np.ndarray,
    ellipsoid: EllipsoidProjector,
    eps: float,
    l1_radius: float,
    tol: float = 1e-6,
    max_iters: int = 200000,
    starts: Optional[Sequence[np.ndarray]] = None,
) -> Tuple[float, np.ndarray]:
    """Maximize ``direction @ theta`` over the ellipsoid / l1-ball intersection.

    Douglas-Rachford splitting of ``i_E`` and ``i_B - <unit, .>`` with
    over-relaxation: each iteration is one ellipsoid projection and one
    shifted l1 projection.  The single-constraint closed forms seed the
    fixed point and are kept as exact candidates, so the result is exact
    whenever one constraint is slack.  The returned point is exactly
    feasible, hence the value is also a certified lower bound; the
    fixed-point residual is driven two orders below ``tol`` (relative to
    the unit-direction objective) before stopping, and exhaustion of the
    iteration cap raises instead of returning silently.

    Working on the unit direction makes the result exactly positively
    homogeneous under power-of-two rescaling of ``direction``.
    """
    if eps <= 0 or l1_radius <= 0:
        raise ValueError("eps and l1_radius must be positive")
    xi = np.asarray(direction, dtype=float)
    norm = float(np.linalg.norm(xi))
    if norm == 0.0:
        return 0.0, np.zeros_like(xi)
    unit = xi / norm

    candidates: list = []
    # l1 vertex along the largest component, shrunk into the ellipsoid
    k = int(np.argmax(np.abs(unit)))
    vertex = np.zeros_like(unit)
    vertex[k] = l1_radius * (1.0 if unit[k] >= 0 else -1.0)
    candidates.append(scale_into_feasibility(vertex, ellipsoid, eps, l1_radius))
    # ellipsoid-only maximizer, defined when the direction lies in range(G)
    q = ellipsoid.evecs.T @ unit
    pos = ellipsoid.evals > 0
    if np.any(pos) and float(np.linalg.norm(q[~pos])) <= 1e-12:
        w = np.zeros_like(q)
        w[pos] = q[pos] / ellipsoid.evals[pos]
        cand = ellipsoid.evecs @ w
        denom = np.sqrt(max(ellipsoid.quad(cand), 0.0))
        if denom > 0:
            candidates.append(
                scale_into_feasibility(cand * (eps / denom), ellipsoid, eps, l1_radius)
            )
    if starts is not None:
        candidates.extend(
            scale_into_feasibility(np.asarray(s, float), ellipsoid, eps, l1_radius)
            for s in starts
        )

    best_val = -np.inf
    best_theta = np.zeros_like(unit)
    for cand in candidates:
        val = float(unit @ cand)
        if val > best_val:
            best_val, best_theta = val, cand

    gamma = 3.0 * l1_radius
    fp_tol = max(min(tol, 1e-3) / 100.0, 1e-12)
    z = best_theta.copy()  # warm start at the best closed-form candidate
    x = z
    converged = False
    for it in range(max_iters):
        x = ellipsoid.project(z, eps)
        y = project_l1(2.0 * x - z + gamma * unit, l1_radius)
        z = z + _RELAXATION * (y - x)
        if it % _CHECK_EVERY == _CHECK_EVERY - 1:
            gap = float(np.linalg.norm(x - y))
            if gap <= fp_tol * max(1.0, float(np.linalg.norm(x))):
                converged = True
                break
    if not converged:
        raise ConvergenceError(
            f"supremum splitting did not stabilize within {max_iters} iterations "
            f"(tol={tol:g})"
        )
    theta = scale_into_feasibility((x + y) / 2.0, ellipsoid, eps, l1_radius)
    val = float(unit @ theta)
    if val > best_val:
        best_val, best_theta = val, theta
    return norm * best_val, best_theta

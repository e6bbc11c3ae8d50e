"""Empirical-process laboratory.

Rademacher draws over a function system, exact-ish constrained suprema of
the sign-randomized base process, Monte Carlo means with standard errors,
evaluators for every explicit deviation bound used downstream, and tail
frequency checks against the concentration bound.

Conventions.  The base process maximizes ``sum_k theta_k xi_k`` with
``xi_k = (1/n) sum_i psi_k(x_i) sign_i`` over the symmetric feasible set
``{theta @ G @ theta <= eps^2} ∩ {||theta||_1 <= M}``, so the absolute
value in the supremum is attained automatically.  All Monte Carlo loops
derive replication streams from ``(seed, r)`` and are reproducible under
any worker count.  Every "estimate <= bound" assertion allows three
standard errors of slack; the loss-process supremum is a certified lower
bound (feasible maximizer), which keeps one-sided bound checks sound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from boundlab.design import (
    FunctionSystem,
    NoiseSpec,
    SyntheticInstance,
    evaluate,
    gram,
)
from boundlab.errors import BoundCheckError
from boundlab.losses import LossModel, loss_for, sample_responses
from boundlab.parallel import run_indexed
from boundlab.projections import (
    EllipsoidProjector,
    project_intersection,
    scale_into_feasibility,
    sup_over_intersection,
)
from boundlab.seeding import derived_rng, fold_seed

# ---------------------------------------------------------------------------
# Rademacher draws


@dataclass(frozen=True)
class RademacherDraw:
    """Signs at the design points and their correlations with each row."""

    signs: np.ndarray
    xi: np.ndarray

    def __post_init__(self) -> None:
        signs = np.asarray(self.signs, dtype=float)
        xi = np.asarray(self.xi, dtype=float)
        if not np.all(np.abs(signs) == 1.0):
            raise ValueError("signs must be +-1")
        object.__setattr__(self, "signs", signs)
        object.__setattr__(self, "xi", xi)


def xi_from_signs(system: FunctionSystem, signs: np.ndarray) -> RademacherDraw:
    signs = np.asarray(signs, dtype=float)
    if signs.shape != (system.n,):
        raise ValueError(f"signs have shape {signs.shape}, expected ({system.n},)")
    return RademacherDraw(signs, system.values @ signs / system.n)


def draw_xi(system: FunctionSystem, seed: int, *path: int) -> RademacherDraw:
    """Seeded i.i.d. uniform signs and the induced xi vector."""
    rng = derived_rng(seed, *path)
    signs = rng.integers(0, 2, size=system.n) * 2.0 - 1.0
    return xi_from_signs(system, signs)


# ---------------------------------------------------------------------------
# Constrained supremum of the base process


class SupResult(NamedTuple):
    value: float
    theta: np.ndarray


def sup_base_process(
    gram_matrix: np.ndarray,
    xi: np.ndarray,
    eps: float,
    big_m: float,
    tol: float = 1e-6,
    projector: Optional[EllipsoidProjector] = None,
) -> SupResult:
    """Maximize ``<theta, xi>`` over the ellipsoid / l1-ball intersection.

    Multi-start projected gradient ascent with Dykstra projections; the
    single-constraint closed forms seed the search and are exact whenever
    the other constraint is slack.  Raises on nonpositive radii and
    propagates :class:`~boundlab.errors.ConvergenceError` from the
    projection when it fails to stabilize, never returning silently.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if big_m <= 0:
        raise ValueError("M must be positive")
    proj = EllipsoidProjector(gram_matrix) if projector is None else projector
    value, theta = sup_over_intersection(np.asarray(xi, float), proj, eps, big_m, tol=tol)
    return SupResult(value, theta)


@dataclass(frozen=True)
class IncrementEstimate:
    """Monte Carlo estimate of a supremum mean next to its paper bound."""

    eps: float
    big_m: float
    mc_mean: float
    mc_se: float
    bound: float
    replications: int
    seed: int
    failures: int = 0

    def __post_init__(self) -> None:
        if self.replications < 2:
            raise ValueError("need at least 2 replications")
        if self.mc_se < 0:
            raise ValueError("standard error cannot be negative")

    @property
    def ratio(self) -> float:
        """(mean + 3 SE) / bound; below 1 means the bound check passed."""
        return (self.mc_mean + 3.0 * self.mc_se) / self.bound

    @property
    def valid(self) -> bool:
        return self.failures == 0


def _base_sup_chunk(payload: tuple, indices: Sequence[int]) -> list:
    values, eps, big_m, tol, seed = payload
    system = FunctionSystem(values)
    proj = EllipsoidProjector(gram(system))
    out = []
    for r in indices:
        draw = draw_xi(system, seed, r)
        out.append(
            sup_base_process(None, draw.xi, eps, big_m, tol=tol, projector=proj).value
        )
    return out


def mc_base_draws(
    system: FunctionSystem,
    eps: float,
    big_m: float,
    replications: int,
    seed: int,
    tol: float = 1e-5,
    workers: int = 1,
) -> np.ndarray:
    """Independent draws of the base-process supremum, one per replication."""
    payload = (np.asarray(system.values), float(eps), float(big_m), float(tol), int(seed))
    vals = run_indexed(_base_sup_chunk, payload, replications, workers)
    return np.asarray(vals, dtype=float)


def mc_mean_base(
    system: FunctionSystem,
    eps: float,
    big_m: float,
    envelope_a: float,
    s: float,
    replications: int,
    seed: int,
    tol: float = 1e-5,
    workers: int = 1,
) -> IncrementEstimate:
    """MC mean and SE of the base-process supremum, with its bound attached.

    Solver failures abort the whole estimate (a partial mean would be
    biased); the failure count is carried on the raised error's message.
    """
    if replications < 2:
        raise ValueError("need at least 2 replications")
    vals = mc_base_draws(system, eps, big_m, replications, seed, tol=tol, workers=workers)
    bound = base_increment_bound(eps, big_m, envelope_a, s, system.m, system.n)
    return IncrementEstimate(
        eps=float(eps),
        big_m=float(big_m),
        mc_mean=float(vals.mean()),
        mc_se=float(vals.std(ddof=1) / math.sqrt(replications)),
        bound=bound,
        replications=int(replications),
        seed=int(seed),
        failures=0,
    )


# ---------------------------------------------------------------------------
# Closed-form bounds


def hull_increment_bound(eps: float, envelope_a: float, s: float, m: int, n: int) -> float:
    """Direct increment bound for the unit convex hull of the dictionary:
    ``20 sqrt(1 + 2A) eps^s sqrt(log(6m) / n)``."""
    if m < 4:
        raise ValueError(f"violated precondition m >= 4 (m = {m})")
    if eps < 16.0 / m:
        raise ValueError(f"violated precondition eps >= 16/m ({eps} < {16.0 / m})")
    if envelope_a < 1:
        raise ValueError(f"violated precondition A >= 1 (A = {envelope_a})")
    if not 0 < s < 1:
        raise ValueError(f"violated precondition 0 < s < 1 (s = {s})")
    return 20.0 * math.sqrt(1.0 + 2.0 * envelope_a) * eps**s * math.sqrt(math.log(6.0 * m) / n)


def base_increment_bound(
    eps: float, big_m: float, envelope_a: float, s: float, m: int, n: int
) -> float:
    """Renormalized increment bound over ``{||f_theta||_n <= eps, I(theta) <= M}``:
    ``20 sqrt(1 + 4A) M^(1-s) eps^s sqrt(log(12m) / n)``."""
    if m < 2:
        raise ValueError(f"violated precondition m >= 2 (m = {m})")
    if big_m <= 0 or eps <= 0:
        raise ValueError("eps and M must be positive")
    if eps / big_m <= 8.0 / m:
        raise ValueError(
            f"violated precondition eps/M > 8/m ({eps / big_m} <= {8.0 / m})"
        )
    if envelope_a < 1:
        raise ValueError(f"violated precondition A >= 1 (A = {envelope_a})")
    if not 0 < s < 1:
        raise ValueError(f"violated precondition 0 < s < 1 (s = {s})")
    return (
        20.0
        * math.sqrt(1.0 + 4.0 * envelope_a)
        * big_m ** (1.0 - s)
        * eps**s
        * math.sqrt(math.log(12.0 * m) / n)
    )


def increment_rate(envelope_a: float, m: int, n: int) -> float:
    """Increment rate entering the deviation lemma:
    ``80 sqrt(1 + 4A) sqrt(log(12m) / n)``."""
    if envelope_a < 1:
        raise ValueError(f"violated precondition A >= 1 (A = {envelope_a})")
    if m < 2:
        raise ValueError(f"violated precondition m >= 2 (m = {m})")
    if n < 1:
        raise ValueError(f"violated precondition n >= 1 (n = {n})")
    return 80.0 * math.sqrt(1.0 + 4.0 * envelope_a) * math.sqrt(math.log(12.0 * m) / n)


class ThresholdTail(NamedTuple):
    threshold: float
    tail_bound: float


def deviation_threshold_and_tail(
    eps: float,
    big_m: float,
    sigma: float,
    envelope_a: float,
    s: float,
    m: int,
    n: int,
) -> ThresholdTail:
    """Deviation threshold and tail probability for the loss-increment sup:
    threshold ``lambda_n0 eps^s M^(1-s) + eps^2 / (27 sigma^2)``, tail
    ``exp(-n eps^2 / (2 (27 sigma^2)^2))``."""
    if sigma <= 0:
        raise ValueError(f"violated precondition sigma > 0 (sigma = {sigma})")
    if m < 2:
        raise ValueError(f"violated precondition m >= 2 (m = {m})")
    if big_m <= 0 or eps <= 0:
        raise ValueError("eps and M must be positive")
    if eps / big_m <= 8.0 / m:
        raise ValueError(
            f"violated precondition eps/M > 8/m ({eps / big_m} <= {8.0 / m})"
        )
    if not 0 < s < 1:
        raise ValueError(f"violated precondition 0 < s < 1 (s = {s})")
    lam0 = increment_rate(envelope_a, m, n)
    threshold = lam0 * eps**s * big_m ** (1.0 - s) + eps**2 / (27.0 * sigma**2)
    tail = math.exp(-n * eps**2 / (2.0 * (27.0 * sigma**2) ** 2))
    return ThresholdTail(threshold, tail)


def finite_class_max_bound(range_l: float, m: int, n: int) -> float:
    """Mean bound for the max of m centered bounded averages:
    ``2 L sqrt(log(3m) / n)`` with ``L^2`` the worst per-summand squared
    range averaged over observations."""
    if range_l <= 0:
        raise ValueError(f"violated precondition L > 0 (L = {range_l})")
    if m < 1:
        raise ValueError(f"violated precondition m >= 1 (m = {m})")
    return 2.0 * range_l * math.sqrt(math.log(3.0 * m) / n)


# ---------------------------------------------------------------------------
# Finite-class maxima


class MaxClassEstimate(NamedTuple):
    mc_mean: float
    mc_se: float
    range_l: float
    bound: float
    replications: int
    seed: int


def _max_class_chunk(payload: tuple, indices: Sequence[int]) -> list:
    values, seed = payload
    system = FunctionSystem(values)
    return [float(np.max(np.abs(draw_xi(system, seed, r).xi))) for r in indices]


def mc_max_finite_class(
    system: FunctionSystem,
    replications: int,
    seed: int,
    workers: int = 1,
) -> MaxClassEstimate:
    """MC estimate of ``E max_k |xi_k|`` against its finite-class bound.

    The summand ``psi_k(x_i) sign_i`` ranges over ``[-|psi_k(x_i)|,
    |psi_k(x_i)|]``, so the range constant is ``L = 2 max_k ||psi_k||_n``.
    Raises :class:`BoundCheckError` when the estimate exceeds the bound by
    more than three standard errors.
    """
    if replications < 2:
        raise ValueError("need at least 2 replications")
    payload = (np.asarray(system.values), int(seed))
    vals = np.asarray(run_indexed(_max_class_chunk, payload, replications, workers))
    mean = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(replications))
    range_l = 2.0 * float(system.row_norms().max())
    bound = finite_class_max_bound(range_l, system.m, system.n)
    if mean - 3.0 * se > bound:
        raise BoundCheckError(
            f"finite-class mean {mean:.6g} exceeds bound {bound:.6g} beyond 3 SE"
        )
    return MaxClassEstimate(mean, se, range_l, bound, int(replications), int(seed))


def trivial_increment_bound(big_m: float, max_class_mean: float) -> float:
    """The rough finite-class route: ``M * E max_k |xi_k|``."""
    return big_m * max_class_mean


def exact_max_xi_mean(system: FunctionSystem, max_n: int = 20) -> float:
    """Exact ``E max_k |xi_k|`` by enumerating all 2^n sign patterns."""
    n = system.n
    if n > max_n:
        raise ValueError(f"enumeration limited to n <= {max_n}, got {n}")
    codes = np.arange(2**n, dtype=np.uint64)
    bits = (codes[:, None] >> np.arange(n, dtype=np.uint64)[None, :]) & 1
    signs = bits.astype(float) * 2.0 - 1.0
    xi = signs @ system.values.T / n  # (2^n, m)
    return float(np.mean(np.max(np.abs(xi), axis=1)))


# ---------------------------------------------------------------------------
# Loss-process supremum and tail checks


class LossSupResult(NamedTuple):
    value: float
    theta: np.ndarray  # the offset delta = theta - theta_star at the best point
    low_confidence: bool


def centered_increment(
    system: FunctionSystem,
    loss: LossModel,
    theta_star: np.ndarray,
    y: np.ndarray,
    delta: np.ndarray,
) -> float:
    """``(P_n - P)(gamma_{f_{theta*+delta}} - gamma_{f_theta*})`` exactly."""
    f_star = evaluate(system, theta_star)
    f = f_star + delta @ system.values
    emp = float(np.mean(loss.value(f, y) - loss.value(f_star, y)))
    pop = float(
        np.mean(
            loss.pointwise_population_risk(f, f_star)
            - loss.pointwise_population_risk(f_star, f_star)
        )
    )
    return emp - pop


def loss_increment_sup(
    system: FunctionSystem,
    loss: LossModel,
    theta_star: np.ndarray,
    y: np.ndarray,
    eps: float,
    big_m: float,
    restarts: int = 6,
    iters: int = 50,
    tol: float = 1e-6,
    seed: int = 0,
) -> LossSupResult:
    """Lower-bound estimate of the centered loss-increment supremum.

    Maximizes ``|(P_n - P)(gamma_{f_theta} - gamma_{f_theta*})|`` over
    ``||f_theta - f_theta*||_n <= eps`` and ``I(theta - theta*) <= M`` by
    multi-start projected subgradient ascent in the offset delta (step
    schedule ``0.5 M / (||grad|| sqrt(t))``).  The objective is not
    concave, so the returned value is a certified lower bound (the
    maximizer is exactly feasible); bound checks built on it test
    "estimate <= bound" and stay sound under underestimation.

    ``low_confidence`` is set when no restart's final step improved by at
    most ``tol``, i.e. the budget ran out while still climbing.
    """
    if eps == 0.0 or big_m == 0.0:
        return LossSupResult(0.0, np.zeros(system.m), False)
    if eps < 0 or big_m < 0:
        raise ValueError("eps and M must be nonnegative")
    y = np.asarray(y, dtype=float)
    f_star = evaluate(system, theta_star)
    proj = EllipsoidProjector(gram(system))
    rng = derived_rng(seed)

    def objective_and_grad(delta: np.ndarray) -> tuple:
        f = f_star + delta @ system.values
        emp = float(np.mean(loss.value(f, y) - loss.value(f_star, y)))
        pop = float(
            np.mean(
                loss.pointwise_population_risk(f, f_star)
                - loss.pointwise_population_risk(f_star, f_star)
            )
        )
        g = emp - pop
        grad_vec = (
            loss.dvalue(f, y) - loss.pointwise_population_risk_grad(f, f_star)
        )
        grad = system.values @ grad_vec / system.n
        return g, grad

    best_val = 0.0
    best_delta = np.zeros(system.m)
    any_stationary = False
    step0 = 0.5 * big_m
    for _ in range(restarts):
        direction = rng.standard_normal(system.m)
        delta = scale_into_feasibility(
            direction * (0.5 * big_m / max(np.abs(direction).sum(), 1e-12)),
            proj,
            eps,
            big_m,
        )
        prev_val = -np.inf
        last_gain = np.inf
        for t in range(1, iters + 1):
            g, grad = objective_and_grad(delta)
            val = abs(g)
            if val > best_val:
                best_val, best_delta = val, delta
            last_gain = val - prev_val
            prev_val = max(prev_val, val)
            sign = 1.0 if g >= 0 else -1.0
            gnorm = float(np.linalg.norm(grad))
            if gnorm == 0.0:
                any_stationary = True
                break
            step = step0 / (gnorm * math.sqrt(t))
            delta = project_intersection(
                delta + sign * step * grad, proj, eps, big_m, tol=1e-9
            )
            delta = scale_into_feasibility(delta, proj, eps, big_m)
        else:
            val = abs(centered_increment(system, loss, theta_star, y, delta))
            if val > best_val:
                best_val, best_delta = val, delta
            last_gain = min(last_gain, val - prev_val)
        if last_gain <= tol:
            any_stationary = True
    return LossSupResult(float(best_val), best_delta, not any_stationary)


class TailCheck(NamedTuple):
    eps: float
    big_m: float
    sigma: float
    threshold: float
    tail_bound: float
    frequency: float
    se: float
    exceedances: int
    replications: int
    ok: bool


def _tail_chunk(payload: tuple, indices: Sequence[int]) -> list:
    (values, theta_star, noise_kind, half_width, inst_seed, eps, big_m,
     threshold, restarts, iters, seed) = payload
    system = FunctionSystem(values)
    instance = SyntheticInstance(
        system, theta_star, NoiseSpec(noise_kind, half_width), inst_seed
    )
    loss = loss_for(instance)
    out = []
    for r in indices:
        y = sample_responses(instance, r)
        res = loss_increment_sup(
            system, loss, instance.theta_star, y, eps, big_m,
            restarts=restarts, iters=iters, seed=fold_seed(seed, r),
        )
        out.append(res.value >= threshold)
    return out


def deviation_tail_check(
    instance: SyntheticInstance,
    eps: float,
    big_m: float,
    sigma: float,
    envelope_a: float,
    s: float,
    replications: int,
    seed: int,
    restarts: int = 4,
    iters: int = 30,
    workers: int = 1,
) -> TailCheck:
    """Empirical exceedance frequency of the deviation threshold.

    Over independently drawn datasets, counts how often the loss-increment
    supremum estimate reaches the threshold, and compares the frequency to
    the tail bound plus three binomial standard errors.
    """
    if replications < 2:
        raise ValueError("need at least 2 replications for a standard error")
    threshold, tail = deviation_threshold_and_tail(
        eps, big_m, sigma, envelope_a, s, instance.system.m, instance.system.n
    )
    payload = (
        np.asarray(instance.system.values),
        np.asarray(instance.theta_star),
        instance.noise.kind,
        instance.noise.half_width,
        int(instance.seed),
        float(eps),
        float(big_m),
        float(threshold),
        int(restarts),
        int(iters),
        int(seed),
    )
    hits = run_indexed(_tail_chunk, payload, replications, workers)
    exceed = int(sum(bool(h) for h in hits))
    freq = exceed / replications
    se = math.sqrt(max(tail * (1.0 - tail), 0.0) / replications)
    ok = freq <= tail + 3.0 * se
    return TailCheck(
        float(eps), float(big_m), float(sigma), threshold, tail,
        freq, se, exceed, int(replications), bool(ok),
    )

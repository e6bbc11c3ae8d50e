"""Convex Lipschitz loss models with exact population risk and margins.

Two families are supported, each pairing a loss with the response law it
is the pointwise conditional-risk minimizer for:

* absolute (LAD / median check) loss with uniform noise of half-width b;
* logistic loss with labels in {-1, +1} drawn from the logistic link.

Both have per-link Lipschitz constant at most 1 and are convex in the
link value, and both admit closed-form population risk per design point,
which is what makes exact centered-increment evaluation possible.  The
margin function sigma(M) certifies that excess population risk dominates
``||f - f*||_n^2 / sigma(M)^2`` on sup-norm balls of radius M around the
target; the constants here are derived per family (the quadratic-loss
case and quantiles other than the median are out of scope).
"""

from __future__ import annotations

import math
from typing import Union

import numpy as np
from scipy.special import expit

from boundlab.design import (
    FunctionSystem,
    SyntheticInstance,
    evaluate,
)
from boundlab.seeding import derived_rng


class AbsoluteLoss:
    """``gamma(a, y) = |y - a|`` with uniform(-b, b) response noise."""

    kind = "absolute"

    def __init__(self, half_width: float):
        if half_width <= 0:
            raise ValueError("half_width must be positive")
        self.half_width = float(half_width)

    def value(self, a: np.ndarray, y: np.ndarray) -> np.ndarray:
        return np.abs(np.asarray(y, float) - np.asarray(a, float))

    def dvalue(self, a: np.ndarray, y: np.ndarray) -> np.ndarray:
        """A subgradient in the link value (0 at the kink)."""
        return np.sign(np.asarray(a, float) - np.asarray(y, float))

    def pointwise_population_risk(self, a: np.ndarray, f_star: np.ndarray) -> np.ndarray:
        """``E |f_star + U - a|`` for U uniform on (-b, b), elementwise.

        Equals ``(b^2 + d^2) / (2 b)`` for ``|d| <= b`` and ``|d|`` beyond,
        with ``d = a - f_star``.
        """
        b = self.half_width
        d = np.asarray(a, float) - np.asarray(f_star, float)
        inside = (b * b + d * d) / (2.0 * b)
        return np.where(np.abs(d) <= b, inside, np.abs(d))

    def pointwise_population_risk_grad(
        self, a: np.ndarray, f_star: np.ndarray
    ) -> np.ndarray:
        b = self.half_width
        d = np.asarray(a, float) - np.asarray(f_star, float)
        return np.clip(d / b, -1.0, 1.0)

    def sample(self, f_star: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        b = self.half_width
        return np.asarray(f_star, float) + rng.uniform(-b, b, size=len(f_star))

    def margin_sigma(self, big_m: float, f_star: np.ndarray) -> float:
        """Certified margin constant on the sup-norm ball of radius M.

        The pointwise excess risk is exactly ``d^2 / (2b)`` for ``|d| <= b``
        and ``|d| - b/2`` beyond; the worst ratio ``d^2 / excess`` over
        ``|d| <= M`` is ``2b`` when ``M <= b`` and ``M^2 / (M - b/2)``
        otherwise, which is what sigma^2(M) must dominate.
        """
        if big_m <= 0:
            raise ValueError("M must be positive")
        b = self.half_width
        if big_m <= b:
            return math.sqrt(2.0 * b)
        return math.sqrt(max(2.0 * b, big_m**2 / (big_m - b / 2.0)))


class LogisticLoss:
    """``gamma(a, y) = log(1 + exp(-y a))`` with logistic-link labels."""

    kind = "logistic"

    def value(self, a: np.ndarray, y: np.ndarray) -> np.ndarray:
        return np.logaddexp(0.0, -np.asarray(y, float) * np.asarray(a, float))

    def dvalue(self, a: np.ndarray, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, float)
        return -y * expit(-y * np.asarray(a, float))

    def pointwise_population_risk(self, a: np.ndarray, f_star: np.ndarray) -> np.ndarray:
        p = expit(np.asarray(f_star, float))
        a = np.asarray(a, float)
        return p * np.logaddexp(0.0, -a) + (1.0 - p) * np.logaddexp(0.0, a)

    def pointwise_population_risk_grad(
        self, a: np.ndarray, f_star: np.ndarray
    ) -> np.ndarray:
        return expit(np.asarray(a, float)) - expit(np.asarray(f_star, float))

    def sample(self, f_star: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        p = expit(np.asarray(f_star, float))
        return np.where(rng.uniform(size=len(f_star)) < p, 1.0, -1.0)

    def margin_sigma(self, big_m: float, f_star: np.ndarray) -> float:
        """Margin constant from the minimum curvature on the reachable range.

        The pointwise expected loss has second derivative
        ``expit(a) (1 - expit(a))`` regardless of the label probability,
        so on ``[min f* - M, max f* + M]`` the excess risk dominates
        ``c_min d^2 / 2`` with ``c_min`` the curvature at the endpoint of
        largest magnitude; sigma^2(M) = 2 / c_min.
        """
        if big_m <= 0:
            raise ValueError("M must be positive")
        f_star = np.asarray(f_star, float)
        reach = max(abs(float(f_star.min()) - big_m), abs(float(f_star.max()) + big_m))
        c_min = float(expit(reach) * (1.0 - expit(reach)))
        return math.sqrt(2.0 / c_min)


LossModel = Union[AbsoluteLoss, LogisticLoss]


def loss_for(instance: SyntheticInstance) -> LossModel:
    """The loss model paired with an instance's noise family."""
    if instance.noise.kind == "uniform":
        return AbsoluteLoss(instance.noise.half_width)
    if instance.noise.kind == "logistic":
        return LogisticLoss()
    raise ValueError(f"unsupported noise family {instance.noise.kind!r}")


def sample_responses(instance: SyntheticInstance, *path: int) -> np.ndarray:
    """Draw responses for an instance from the child stream ``path``."""
    loss = loss_for(instance)
    rng = derived_rng(instance.seed, *path)
    return loss.sample(instance.f_star(), rng)


def empirical_risk(
    loss: LossModel,
    system: FunctionSystem,
    theta: np.ndarray,
    y: np.ndarray,
) -> float:
    """``(1/n) sum_i gamma(f_theta(x_i), y_i)``."""
    y = np.asarray(y, float)
    if y.shape != (system.n,):
        raise ValueError(f"data has shape {y.shape}, expected ({system.n},)")
    return float(np.mean(loss.value(evaluate(system, theta), y)))


def population_risk(
    loss: LossModel,
    system: FunctionSystem,
    theta: np.ndarray,
    theta_star: np.ndarray,
) -> float:
    """Exact expected risk ``(1/n) sum_i E gamma(f_theta(x_i), Y_i)``."""
    a = evaluate(system, theta)
    f_star = evaluate(system, theta_star)
    return float(np.mean(loss.pointwise_population_risk(a, f_star)))


def margin_sigma(loss: LossModel, big_m: float, instance: SyntheticInstance) -> float:
    """Certified non-decreasing margin function evaluated at M."""
    return loss.margin_sigma(big_m, instance.f_star())

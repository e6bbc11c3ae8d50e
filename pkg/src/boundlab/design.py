"""Base-function systems on a fixed design, norms, and synthetic instances.

A function system is the m-by-n matrix of base-function values
``values[k, i] = psi_k(x_i)``.  The design points themselves are never
stored: everything downstream (norms, Gram matrix, estimators, bounds)
only touches the evaluations.  Indices are 0-based throughout.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

#: Coefficient vectors are plain 1-D float arrays of length ``system.m``.
CoefVector = np.ndarray


def _as_coef(theta: Union[CoefVector, Sequence[float]], m: int) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 1 or theta.shape[0] != m:
        raise ValueError(
            f"coefficient vector has shape {theta.shape}, expected ({m},)"
        )
    return theta


@dataclass(frozen=True)
class FunctionSystem:
    """Evaluations of m base functions at n design points.

    The matrix is frozen at construction and shared read-only; all
    operations on it are pure.  The sup-norm certificate (every entry in
    [-1, 1]) is *checked*, not enforced, by :func:`validate_assumption_a`,
    so that violating systems can be constructed and reported.
    """

    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ValueError(f"values must be 2-D, got shape {values.shape}")
        if values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError(f"need m >= 1 and n >= 1, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("values must be finite")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def row_norms(self) -> np.ndarray:
        """Empirical norms of the base functions, ``||psi_k||_n``."""
        return np.sqrt(np.mean(self.values**2, axis=1))


def evaluate(system: FunctionSystem, theta: CoefVector) -> np.ndarray:
    """Values of ``f_theta = sum_k theta_k psi_k`` at the design points."""
    theta = _as_coef(theta, system.m)
    return theta @ system.values


def empirical_norm(f: Union[np.ndarray, Sequence[float]]) -> float:
    """Root mean square of ``f`` over the design points."""
    f = np.asarray(f, dtype=float)
    if f.size == 0:
        raise ValueError("empirical norm of an empty sequence")
    return float(np.sqrt(np.mean(f**2)))


def ell1_norm(theta: Union[CoefVector, Sequence[float]]) -> float:
    """Sum of absolute coefficients."""
    return float(np.sum(np.abs(np.asarray(theta, dtype=float))))


def gram(system: FunctionSystem) -> np.ndarray:
    """The m-by-m matrix ``G[k, l] = (1/n) sum_i psi_k(x_i) psi_l(x_i)``.

    Symmetric positive semidefinite; singular whenever rows are linearly
    dependent, which correlated designs are expected to produce.  It
    satisfies ``||f_theta||_n^2 = theta @ G @ theta``.
    """
    g = system.values @ system.values.T / system.n
    return (g + g.T) / 2.0


def build_tv_system(n: int, m: int) -> FunctionSystem:
    """Step-function dictionary on the grid ``x_i = i/n``, ``i = 1..n``.

    ``psi_k(x) = 1{x >= k/m}`` for ``k = 1..m``: entries are 0/1, so the
    sup-norm certificate holds, and consecutive rows overlap heavily.  The
    l1 norm of coefficients equals the total variation of ``f_theta`` on
    the grid (plus the level of the first step), which is what makes this
    the canonical highly correlated family.
    """
    if m < 2:
        raise ValueError(f"need m >= 2, got {m}")
    if n < m:
        raise ValueError(f"need n >= m, got n={n}, m={m}")
    x = np.arange(1, n + 1) / n
    thresholds = np.arange(1, m + 1)[:, None] / m
    return FunctionSystem((x[None, :] >= thresholds).astype(float))


class AssumptionAReport(NamedTuple):
    ok: bool
    max_abs: float
    k: int
    i: int


def validate_assumption_a(system: FunctionSystem) -> AssumptionAReport:
    """Check ``max |psi_k(x_i)| <= 1`` and report the maximizing entry."""
    a = np.abs(system.values)
    flat = int(np.argmax(a))
    k, i = divmod(flat, system.n)
    max_abs = float(a[k, i])
    return AssumptionAReport(bool(max_abs <= 1.0), max_abs, k, i)


# ---------------------------------------------------------------------------
# Synthetic instances


@dataclass(frozen=True)
class NoiseSpec:
    """Response-noise family.

    ``kind="uniform"``: ``Y_i = f(x_i) + U_i`` with ``U_i`` uniform on
    ``(-half_width, half_width)``; pairs with the absolute loss.
    ``kind="logistic"``: ``Y_i`` in {-1, +1} with ``P(Y_i = 1)`` the
    logistic function of ``f(x_i)``; pairs with the logistic loss.
    """

    kind: str
    half_width: Optional[float] = None

    def __post_init__(self) -> None:
        if self.kind == "uniform":
            if self.half_width is None or self.half_width <= 0:
                raise ValueError("uniform noise requires half_width > 0")
        elif self.kind == "logistic":
            if self.half_width is not None:
                raise ValueError("logistic noise takes no half_width")
        else:
            raise ValueError(f"unknown noise kind {self.kind!r}")


@dataclass(frozen=True)
class SyntheticInstance:
    """A system, a target coefficient vector, and a response law.

    The target is constructive: responses are generated around
    ``f_theta_star``, whose pointwise conditional-risk minimality for the
    paired loss makes ``theta_star`` a population-risk minimizer over all
    of R^m.  Under a singular Gram the minimizer is not unique in
    coefficients; this fixed representative is the one all reports are
    stated against, and function-space quantities are unaffected.
    """

    system: FunctionSystem
    theta_star: np.ndarray
    noise: NoiseSpec
    seed: int

    def __post_init__(self) -> None:
        theta = _as_coef(self.theta_star, self.system.m)
        theta = theta.copy()
        theta.setflags(write=False)
        object.__setattr__(self, "theta_star", theta)

    def f_star(self) -> np.ndarray:
        return evaluate(self.system, self.theta_star)


def make_lad_instance(
    system: FunctionSystem, theta_star: CoefVector, half_width: float, seed: int
) -> SyntheticInstance:
    return SyntheticInstance(
        system, np.asarray(theta_star, float), NoiseSpec("uniform", half_width), seed
    )


def make_logistic_instance(
    system: FunctionSystem, theta_star: CoefVector, seed: int
) -> SyntheticInstance:
    return SyntheticInstance(
        system, np.asarray(theta_star, float), NoiseSpec("logistic"), seed
    )


# ---------------------------------------------------------------------------
# Serialization

# File format: first line "m,n", then m comma-separated rows of n entries,
# each printed with 17 significant digits (lossless for float64).


def dumps_system(system: FunctionSystem) -> str:
    buf = io.StringIO()
    buf.write(f"{system.m},{system.n}\n")
    for row in system.values:
        buf.write(",".join(f"{v:.17g}" for v in row))
        buf.write("\n")
    return buf.getvalue()


def loads_system(text: str) -> FunctionSystem:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty function-system file")
    header = lines[0].split(",")
    if len(header) != 2:
        raise ValueError(f"bad header {lines[0]!r}, expected 'm,n'")
    m, n = int(header[0]), int(header[1])
    if len(lines) != m + 1:
        raise ValueError(f"expected {m} data rows, found {len(lines) - 1}")
    rows = []
    for ln in lines[1:]:
        row = np.array([float(tok) for tok in ln.split(",")], dtype=float)
        if row.shape[0] != n:
            raise ValueError(f"row has {row.shape[0]} entries, expected {n}")
        rows.append(row)
    return FunctionSystem(np.stack(rows))


def save_system(system: FunctionSystem, path: Union[str, os.PathLike]) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(dumps_system(system))


def load_system(path: Union[str, os.PathLike]) -> FunctionSystem:
    with open(path, "r", encoding="ascii") as fh:
        return loads_system(fh.read())

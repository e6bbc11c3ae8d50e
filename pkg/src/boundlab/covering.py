"""Covering numbers of the dictionary under the empirical norm.

The covering estimator is the sequential greedy net: scan the base
functions in index order and open a new center whenever the current
function is farther than ``eps`` from every existing center.  Centers are
pairwise more than ``eps`` apart, which sandwiches the greedy count
between the exact covering number at ``eps`` and the exact count at
``eps/2`` — an upper-bound certificate is all the polynomial-envelope
machinery needs.  Exact minimal covers are only computed by the test
oracles (subset exhaustion for tiny m).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from boundlab.design import FunctionSystem, gram


def pairwise_distances(system: FunctionSystem) -> np.ndarray:
    """Matrix of empirical-norm distances ``||psi_k - psi_l||_n``."""
    g = gram(system)
    d = np.diag(g)
    sq = d[:, None] + d[None, :] - 2.0 * g
    np.maximum(sq, 0.0, out=sq)
    return np.sqrt(sq)


def diameter(system: FunctionSystem) -> float:
    return float(pairwise_distances(system).max())


class GreedyNet(NamedTuple):
    centers: np.ndarray  # indices into 0..m-1, in insertion order
    count: int


def greedy_net(
    system: FunctionSystem,
    eps: float,
    distances: Optional[np.ndarray] = None,
) -> GreedyNet:
    """Sequential greedy eps-net of the rows under the empirical norm.

    Deterministic tie-break: functions are scanned lowest index first, and
    the lowest admissible index becomes the next center.  Every row ends
    up within ``eps`` of some center.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    dist = pairwise_distances(system) if distances is None else distances
    m = system.m
    centers: List[int] = []
    min_dist = np.full(m, np.inf)
    for k in range(m):
        if min_dist[k] > eps:
            centers.append(k)
            np.minimum(min_dist, dist[k], out=min_dist)
    return GreedyNet(np.array(centers, dtype=int), len(centers))


@dataclass(frozen=True)
class Partition:
    """Disjoint cells covering {0..m-1}, each of diameter at most 2*radius."""

    radius: float
    cells: Tuple[Tuple[int, ...], ...]
    centers: Tuple[int, ...]

    def __post_init__(self) -> None:
        seen = sorted(k for cell in self.cells for k in cell)
        if seen != list(range(len(seen))):
            raise ValueError("cells must disjointly cover 0..m-1")
        if len(self.cells) != len(self.centers):
            raise ValueError("one center per cell required")

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def sizes(self) -> np.ndarray:
        return np.array([len(c) for c in self.cells], dtype=int)


def partition_cells(
    system: FunctionSystem,
    radius: float,
    distances: Optional[np.ndarray] = None,
) -> Partition:
    """Voronoi cells of the greedy net at ``radius``.

    Each index joins its nearest center, ties going to the center with the
    lower index.  Since the net covers within ``radius``, every cell has
    diameter at most ``2 * radius``.
    """
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    dist = pairwise_distances(system) if distances is None else distances
    net = greedy_net(system, radius, distances=dist)
    to_centers = dist[net.centers, :]  # (n_cells, m)
    owner = np.argmin(to_centers, axis=0)  # argmin takes the first minimum
    cells = tuple(
        tuple(int(k) for k in np.flatnonzero(owner == j))
        for j in range(net.count)
    )
    return Partition(float(radius), cells, tuple(int(c) for c in net.centers))


@dataclass(frozen=True)
class CoveringReport:
    """Greedy covering counts on an eps grid with a fitted polynomial envelope.

    Invariants: the grid decreases, counts are nonincreasing in eps and at
    most m, ``counts[i] <= A * eps[i]**(-V)`` on every grid point, and the
    smoothness index is ``s = 2 / (2 + V)`` exactly.
    """

    eps_grid: Tuple[float, ...]
    counts: Tuple[int, ...]
    V: float
    A: float
    s: float

    def __post_init__(self) -> None:
        eps = np.asarray(self.eps_grid, dtype=float)
        cnt = np.asarray(self.counts, dtype=int)
        if eps.size == 0 or eps.size != cnt.size:
            raise ValueError("need matching, non-empty eps grid and counts")
        if np.any(np.diff(eps) >= 0):
            raise ValueError("eps grid must be strictly decreasing")
        if np.any(np.diff(cnt) < 0):
            raise ValueError("counts must be non-decreasing as eps decreases")
        if self.V <= 0:
            raise ValueError("V must be positive")
        if self.A < 1:
            raise ValueError("A must be at least 1")
        if not math.isclose(self.s, 2.0 / (2.0 + self.V), rel_tol=0, abs_tol=0):
            raise ValueError("s must equal 2/(2+V) exactly")
        if np.any(cnt > self.A * eps ** (-self.V) * (1 + 1e-12)):
            raise ValueError("envelope A*eps^-V does not dominate the counts")

    def envelope(self, eps: float) -> float:
        return self.A * eps ** (-self.V)


def default_eps_grid(system: FunctionSystem, ratio: float = 1 / math.sqrt(2)) -> np.ndarray:
    """Geometric grid from the dictionary diameter down to ``16/m``.

    The floor matches the validity range of the direct increment bound.
    Degenerate cases (floor above the diameter, or zero diameter) fall
    back to the single-point grid at the diameter.
    """
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie in (0, 1)")
    diam = diameter(system)
    floor = 16.0 / system.m
    if diam <= 0 or diam <= floor:
        return np.array([max(diam, floor)])
    grid = []
    e = diam
    while e >= floor:
        grid.append(e)
        e *= ratio
    return np.array(grid)


def fit_envelope(eps_grid: Sequence[float], counts: Sequence[int], V: float) -> float:
    """Smallest envelope constant: ``A = max(1, max_i counts_i * eps_i**V)``."""
    eps = np.asarray(eps_grid, dtype=float)
    cnt = np.asarray(counts, dtype=float)
    if eps.size == 0:
        raise ValueError("empty grid")
    if np.any(eps <= 0) or np.any(cnt < 1):
        raise ValueError("need eps > 0 and counts >= 1")
    return float(max(1.0, np.max(cnt * eps**V)))


def fit_exponent(eps_grid: Sequence[float], counts: Sequence[int]) -> float:
    """Least-squares slope of ``log count`` against ``log(1/eps)``.

    Rounded up to two decimals so the fitted exponent errs on the side of
    a larger (feasible) envelope; floored at 0.01 when the counts are flat.
    A single-point grid carries no slope information and also yields 0.01.
    """
    eps = np.asarray(eps_grid, dtype=float)
    cnt = np.asarray(counts, dtype=float)
    if eps.size == 0:
        raise ValueError("empty grid")
    if eps.size == 1:
        return 0.01
    slope = np.polyfit(np.log(1.0 / eps), np.log(cnt), 1)[0]
    return max(0.01, math.ceil(slope * 100.0) / 100.0)


def covering_report(
    system: FunctionSystem,
    eps_grid: Optional[Sequence[float]] = None,
    V: Optional[float] = None,
) -> CoveringReport:
    """Run the greedy net over a grid and certify a polynomial envelope.

    ``V`` may be supplied (known structure, e.g. V=2 for the step-function
    family) or fitted from the observed counts.
    """
    grid = default_eps_grid(system) if eps_grid is None else np.asarray(eps_grid, float)
    if grid.size and np.any(np.diff(grid) >= 0):
        raise ValueError("eps grid must be strictly decreasing")
    dist = pairwise_distances(system)
    counts = [greedy_net(system, float(e), distances=dist).count for e in grid]
    v = fit_exponent(grid, counts) if V is None else float(V)
    a = fit_envelope(grid, counts, v)
    return CoveringReport(
        tuple(float(e) for e in grid),
        tuple(int(c) for c in counts),
        v,
        a,
        2.0 / (2.0 + v),
    )

"""Randomized sparsification of convex combinations of base functions.

A convex combination ``f_theta`` over a partitioned dictionary is replaced
by ``sum_j alpha_j psibar_j`` where each ``psibar_j`` averages a few base
functions drawn inside cell j.  With the cell radius tied to ``eps**s``
and per-cell draw counts ``n_j = 1 + floor(alpha_j / eps**(2(1-s)))``, the
sampled representative stays within ``4 eps^2`` of ``f_theta`` in mean
squared empirical norm while touching at most ``K + 1`` atoms, where
``K = floor((1+A) * eps**(-2(1-s)))``.

The exponent in K is implemented as a *negative* power of eps: the chain
``sum_j n_j <= N + eps**(-2(1-s)) <= (1+A) eps**(-2(1-s)) <= K + 1``
forces it, so a printed positive power elsewhere is treated as a sign
typo.  All bound checks here are Monte Carlo on the moment chain; the
existence of a single good realization follows from the moment bounds and
is not searched for.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Tuple

import numpy as np

from boundlab.covering import Partition
from boundlab.design import FunctionSystem, evaluate
from boundlab.seeding import derived_rng, fold_seed


@dataclass(frozen=True)
class SparsificationPlan:
    """Cell weights, within-cell sampling laws, and draw counts.

    ``alpha[j]`` is the total weight of cell j (summing to 1), ``probs[j]``
    the within-cell distribution over the cell's member indices, and
    ``draws[j]`` the number of independent draws taken in cell j.  Cells
    with zero weight keep a degenerate point mass on their center so the
    plan's shape never depends on the particular theta.
    """

    partition: Partition
    alpha: Tuple[float, ...]
    probs: Tuple[Tuple[float, ...], ...]
    draws: Tuple[int, ...]
    eps: float
    s: float

    def total_draws(self) -> int:
        return int(sum(self.draws))

    def variance_chain(self) -> Tuple[float, float]:
        """The two analytic stages ``4 eps^{2s} sum_j alpha_j^2 / n_j <= 4 eps^2``."""
        alpha = np.asarray(self.alpha)
        draws = np.asarray(self.draws, dtype=float)
        mid = 4.0 * self.eps ** (2 * self.s) * float(np.sum(alpha**2 / draws))
        return mid, 4.0 * self.eps**2


def build_plan(
    theta: np.ndarray, partition: Partition, eps: float, s: float
) -> SparsificationPlan:
    """Sparsification plan for convex weights ``theta`` on a partition.

    Requires ``theta >= 0`` summing to 1 (within 1e-12) and a partition
    whose radius is ``eps**s``.
    """
    theta = np.asarray(theta, dtype=float)
    if np.any(theta < 0):
        raise ValueError("convex weights must be nonnegative")
    total = float(theta.sum())
    if abs(total - 1.0) > 1e-12:
        raise ValueError(f"convex weights must sum to 1, got {total!r}")
    if not (0 < s < 1):
        raise ValueError(f"s must lie in (0, 1), got {s}")
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if not math.isclose(partition.radius, eps**s, rel_tol=1e-9, abs_tol=0.0):
        raise ValueError(
            f"partition radius {partition.radius!r} does not equal eps**s = {eps**s!r}"
        )
    cell_width = eps ** (2.0 * (1.0 - s))
    alpha = []
    probs = []
    draws = []
    for cell, center in zip(partition.cells, partition.centers):
        members = np.asarray(cell, dtype=int)
        a = float(theta[members].sum())
        if a > 0.0:
            p = theta[members] / a
        else:
            p = np.zeros(members.size)
            p[members.tolist().index(center)] = 1.0
        alpha.append(a)
        probs.append(tuple(float(x) for x in p))
        draws.append(1 + int(math.floor(a / cell_width)))
    return SparsificationPlan(
        partition,
        tuple(alpha),
        tuple(probs),
        tuple(draws),
        float(eps),
        float(s),
    )


class SampledRepresentative(NamedTuple):
    values: np.ndarray  # f-tilde at the design points
    atom_count: int  # number of distinct base functions drawn
    atoms: np.ndarray  # sorted distinct indices used


def sample_representative(
    plan: SparsificationPlan, system: FunctionSystem, seed: int
) -> SampledRepresentative:
    """Draw the sparse representative ``f~ = sum_j alpha_j psibar_j``.

    ``psibar_j`` averages ``draws[j]`` independent picks from cell j's
    law, so the atom count never exceeds ``sum_j draws[j]``.  Fully
    deterministic given the seed.
    """
    rng = derived_rng(seed)
    f = np.zeros(system.n)
    used: list = []
    for cell, a, p, nj in zip(
        plan.partition.cells, plan.alpha, plan.probs, plan.draws
    ):
        members = np.asarray(cell, dtype=int)
        picks = members[rng.choice(members.size, size=nj, p=np.asarray(p))]
        used.extend(int(x) for x in picks)
        if a > 0.0:
            f += a * system.values[picks, :].mean(axis=0)
    atoms = np.unique(np.asarray(used, dtype=int))
    return SampledRepresentative(f, int(atoms.size), atoms)


def cell_means(plan: SparsificationPlan, system: FunctionSystem) -> np.ndarray:
    """The per-cell expected functions ``g_j = sum_{k in V_j} p_{j,k} psi_k``."""
    out = np.zeros((plan.partition.n_cells, system.n))
    for j, (cell, p) in enumerate(zip(plan.partition.cells, plan.probs)):
        members = np.asarray(cell, dtype=int)
        out[j] = np.asarray(p) @ system.values[members, :]
    return out


class McMoment(NamedTuple):
    mean: float
    se: float
    replications: int
    max_atoms: int


def approximation_error_mc(
    plan: SparsificationPlan,
    system: FunctionSystem,
    theta: np.ndarray,
    replications: int,
    seed: int,
) -> McMoment:
    """Monte Carlo mean and standard error of ``||f~ - f_theta||_n^2``.

    Replication r uses the child stream ``(seed, r)``, so the estimate is
    reproducible under any execution order.  Also reports the largest atom
    count seen, for the combinatorial budget check.
    """
    if replications < 2:
        raise ValueError("need at least 2 replications for a standard error")
    f_theta = evaluate(system, np.asarray(theta, dtype=float))
    vals = np.empty(replications)
    max_atoms = 0
    for r in range(replications):
        rep = sample_representative(plan, system, seed=fold_seed(seed, r))
        vals[r] = float(np.mean((rep.values - f_theta) ** 2))
        max_atoms = max(max_atoms, rep.atom_count)
    mean = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(replications))
    return McMoment(mean, se, replications, max_atoms)


def per_cell_error_mc(
    plan: SparsificationPlan,
    system: FunctionSystem,
    replications: int,
    seed: int,
) -> Tuple[np.ndarray, np.ndarray]:
    """MC mean and SE of ``||psibar_j - g_j||_n^2`` for every cell."""
    if replications < 2:
        raise ValueError("need at least 2 replications for a standard error")
    g = cell_means(plan, system)
    n_cells = plan.partition.n_cells
    vals = np.empty((replications, n_cells))
    for r in range(replications):
        rng = derived_rng(fold_seed(seed, r))
        for j, (cell, p, nj) in enumerate(
            zip(plan.partition.cells, plan.probs, plan.draws)
        ):
            members = np.asarray(cell, dtype=int)
            picks = members[rng.choice(members.size, size=nj, p=np.asarray(p))]
            psibar = system.values[picks, :].mean(axis=0)
            vals[r, j] = float(np.mean((psibar - g[j]) ** 2))
    means = vals.mean(axis=0)
    ses = vals.std(axis=0, ddof=1) / math.sqrt(replications)
    return means, ses


class CombinatorialBudget(NamedTuple):
    n_cells: int
    k_budget: int
    total_draws: int
    pi_bound_log2: float


def combinatorial_budget(
    plan: SparsificationPlan, envelope_a: float, m: int
) -> CombinatorialBudget:
    """Certify the draw-count and realization-count budgets.

    Checks ``sum_j n_j <= K + 1`` with ``K = floor((1+A) eps^{-2(1-s)})``
    and ``N <= A * eps^{-sV}`` (``V = 2/s - 2``), then reports the
    realization-count bound ``(2m)^{(1+2A) eps^{-2(1-s)}}`` as a log2
    value.  Violated preconditions raise, nothing is clamped.
    """
    if envelope_a < 1:
        raise ValueError(f"envelope constant must be >= 1, got {envelope_a}")
    if m < 4:
        raise ValueError(f"need m >= 4, got {m}")
    if plan.eps < 16.0 / m:
        raise ValueError(f"need eps >= 16/m = {16.0 / m}, got {plan.eps}")
    u = plan.eps ** (-2.0 * (1.0 - plan.s))
    k_budget = int(math.floor((1.0 + envelope_a) * u))
    total = plan.total_draws()
    if total > k_budget + 1:
        raise ValueError(
            f"draw budget violated: sum n_j = {total} > K + 1 = {k_budget + 1}"
        )
    v_exp = 2.0 / plan.s - 2.0
    n_cap = envelope_a * plan.eps ** (-plan.s * v_exp)
    n_cells = plan.partition.n_cells
    if n_cells > n_cap * (1 + 1e-12):
        raise ValueError(
            f"cell count {n_cells} exceeds the envelope cap A*eps^(-sV) = {n_cap}"
        )
    pi_log2 = (1.0 + 2.0 * envelope_a) * u * math.log2(2.0 * m)
    return CombinatorialBudget(n_cells, k_budget, total, pi_log2)

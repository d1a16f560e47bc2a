"""
Assignment Problem for PMB Likelihoods
======================================

Every term of the PMB density corresponds to one association of the n
ground-truth objects to distinct Bernoulli components or to the PPP. With
the constant prod_i (1 - r_i) * exp(-lambda-bar) factored out, the log of
each term is minus the sum of the selected entries of an (m + n) x n cost
matrix:

    C[i, j]     = -log(r_i p_i(y_j) / (1 - r_i))    for Bernoulli rows i < m
    C[m + j, j] = -log lambda(y_j)                  PPP diagonal
    C[m + j, l] = +inf                              for l != j

Every column must be matched, every row at most once. This is the plain
rectangular LAP (rows outnumber columns, unmatched rows cost nothing), so
scipy's linear_sum_assignment solves it directly; +inf entries are forbidden
arcs and are never replaced by a large finite constant.

Sections:
    1. Cost matrix
    2. Optimal assignment
    3. Q-best assignments (Murty)
    4. Exhaustive enumeration
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from pmb_nll.config import MAX_BRUTE_FORCE_BERNOULLIS, MAX_BRUTE_FORCE_OBJECTS, R_CLAMP_EPS
from pmb_nll.density import PairwiseLogLikelihoods, pairwise_log_likelihoods
from pmb_nll.errors import BruteForceLimitError
from pmb_nll.types import PPP, Assignment, GroundTruthSet, PmbDensity


# =============================================================================
# SECTION 1: Cost matrix
# =============================================================================


@dataclass(frozen=True, eq=False)
class CostMatrix:
    """(m + n) x n assignment costs; rows [0, m) Bernoullis, rows [m, m + n) the PPP."""

    values: np.ndarray
    num_bernoullis: int

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise ValueError(f"cost matrix must be 2-D, got shape {values.shape}")
        m, n = self.num_bernoullis, values.shape[1]
        if values.shape[0] != m + n:
            raise ValueError(f"expected {m + n} rows for m={m}, n={n}, got {values.shape[0]}")
        if np.isnan(values).any() or np.isneginf(values).any():
            raise ValueError("cost entries must be finite or +inf")
        lower = values[m:, :]
        if n and np.isfinite(lower[~np.eye(n, dtype=bool)]).any():
            raise ValueError("PPP block must be diagonal: off-diagonal entries have to be +inf")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def num_objects(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def target_of_row(self, row: int) -> int:
        return row if row < self.num_bernoullis else PPP

    def row_of_target(self, target: int, gt_index: int) -> int:
        return self.num_bernoullis + gt_index if target == PPP else target

    def cost_of(self, gt_to_target: tuple[int, ...]) -> float:
        """Frobenius inner product of the assignment matrix with C."""
        return math.fsum(
            float(self.values[self.row_of_target(t, j), j]) for j, t in enumerate(gt_to_target)
        )


def cost_matrix_from_log_likelihoods(tables: PairwiseLogLikelihoods) -> CostMatrix:
    """Assemble C from precomputed log terms (existence probabilities must be < 1)."""
    m, n = tables.log_cls.shape
    if np.isneginf(tables.log_1mr).any():
        raise ValueError(
            "existence probability r = 1 gives a -inf cost; clamp r below 1 to build the cost matrix"
        )
    values = np.full((m + n, n), np.inf)
    with np.errstate(invalid="ignore"):
        upper = -(tables.log_detect - tables.log_1mr[:, None])
    values[:m, :] = np.where(np.isnan(upper), np.inf, upper)
    if n:
        values[m + np.arange(n), np.arange(n)] = -tables.log_intensity
    return CostMatrix(values, m)


def build_cost_matrix(pmb: PmbDensity, gts: GroundTruthSet, clamp_r: bool = False) -> CostMatrix:
    """
    Build the PMB assignment cost matrix.

    Args:
        pmb: Predicted PMB density with m Bernoulli components.
        gts: Ground-truth set with n objects.
        clamp_r: Replace r = 1 by 1 - 1e-12 instead of raising.

    Returns:
        CostMatrix of shape (m + n, n). r = 0 or p_cls(c) = 0 give +inf
        (forbidden) entries; an empty intensity leaves the PPP block +inf.

    Raises:
        ValueError: Some r equals 1 and clamp_r is off.
    """
    if clamp_r:
        pmb = pmb.with_clamped_existence(1.0 - R_CLAMP_EPS)
    return cost_matrix_from_log_likelihoods(pairwise_log_likelihoods(pmb, gts))


# =============================================================================
# SECTION 2: Optimal assignment
# =============================================================================


@dataclass(frozen=True)
class _Node:
    """A Murty subproblem: forced (col, row) pairs, forbidden (row, col) arcs, its solution."""

    forced: tuple[tuple[int, int], ...]
    forbidden: frozenset
    rows: tuple[int, ...]


def _solve(
    costs: CostMatrix,
    forced: tuple[tuple[int, int], ...] = (),
    forbidden: frozenset = frozenset(),
) -> Optional[tuple[int, ...]]:
    """Row chosen for every column under the constraints, or None if infeasible."""
    values = costs.values
    n_rows, n_cols = values.shape
    rows = np.full(n_cols, -1, dtype=int)
    used_rows = set()
    for col, row in forced:
        rows[col] = row
        used_rows.add(row)

    free_cols = np.array([c for c in range(n_cols) if rows[c] < 0], dtype=int)
    if free_cols.size:
        free_rows = np.array([r for r in range(n_rows) if r not in used_rows], dtype=int)
        if free_rows.size < free_cols.size:
            return None
        sub = values[np.ix_(free_rows, free_cols)].copy()
        if forbidden:
            row_pos = {int(r): k for k, r in enumerate(free_rows)}
            col_pos = {int(c): k for k, c in enumerate(free_cols)}
            for r, c in forbidden:
                if r in row_pos and c in col_pos:
                    sub[row_pos[r], col_pos[c]] = np.inf
        try:
            ri, ci = linear_sum_assignment(sub)
        except ValueError:
            return None
        if not np.all(np.isfinite(sub[ri, ci])):
            return None
        rows[free_cols[ci]] = free_rows[ri]
    return tuple(int(r) for r in rows)


def _to_assignment(costs: CostMatrix, rows: tuple[int, ...]) -> Assignment:
    targets = tuple(costs.target_of_row(r) for r in rows)
    return Assignment(targets, costs.cost_of(targets))


def solve_optimal(costs: CostMatrix) -> Optional[Assignment]:
    """
    Minimum-cost assignment of every object to a Bernoulli or the PPP.

    Returns:
        The optimal Assignment, or None when no feasible assignment exists
        (e.g. a pure MB with more objects than usable Bernoullis).
    """
    rows = _solve(costs)
    if rows is None:
        return None
    return _to_assignment(costs, rows)


# =============================================================================
# SECTION 3: Q-best assignments (Murty)
# =============================================================================


def murty_k_best(costs: CostMatrix, q: int) -> list[Assignment]:
    """
    The q lowest-cost assignments in non-decreasing cost order.

    Murty's partitioning: a popped solution's remaining space is split on its
    free pairings taken in ground-truth index order; the k-th child forbids
    the k-th pairing and forces the ones before it. Ties are broken
    lexicographically on gt_to_target.

    Args:
        costs: Cost matrix.
        q: Number of assignments wanted (>= 1).

    Returns:
        Up to q distinct assignments; empty when the root problem is infeasible.
    """
    if q < 1:
        raise ValueError(f"q must be at least 1, got {q}")

    root_rows = _solve(costs)
    if root_rows is None:
        return []

    counter = itertools.count()
    root = _to_assignment(costs, root_rows)
    heap = [(root.total_cost, root.gt_to_target, next(counter), _Node((), frozenset(), root_rows))]
    out: list[Assignment] = []

    # pops come out in non-decreasing cost; past the q-th, keep draining
    # solutions that tie with it so the lexicographic cut below is exact
    while heap and (len(out) < q or heap[0][0] <= out[q - 1].total_cost):
        cost, targets, _, node = heapq.heappop(heap)
        out.append(Assignment(targets, cost))

        forced = list(node.forced)
        forced_cols = {c for c, _ in node.forced}
        for col, row in enumerate(node.rows):
            if col in forced_cols:
                continue
            child_forbidden = node.forbidden | {(row, col)}
            child_forced = tuple(forced)
            rows = _solve(costs, child_forced, child_forbidden)
            if rows is not None:
                child = _to_assignment(costs, rows)
                heapq.heappush(
                    heap,
                    (
                        child.total_cost,
                        child.gt_to_target,
                        next(counter),
                        _Node(child_forced, child_forbidden, rows),
                    ),
                )
            forced.append((col, row))

    out.sort(key=lambda a: (a.total_cost, a.gt_to_target))
    return out[:q]


# =============================================================================
# SECTION 4: Exhaustive enumeration
# =============================================================================


def enumerate_all(costs: CostMatrix) -> list[Assignment]:
    """
    Every feasible assignment exactly once, sorted by (total_cost, gt_to_target).

    Raises:
        BruteForceLimitError: More than 8 Bernoullis or 6 objects.
    """
    m, n = costs.num_bernoullis, costs.num_objects
    if m > MAX_BRUTE_FORCE_BERNOULLIS or n > MAX_BRUTE_FORCE_OBJECTS:
        raise BruteForceLimitError(
            f"enumeration is limited to m <= {MAX_BRUTE_FORCE_BERNOULLIS} and "
            f"n <= {MAX_BRUTE_FORCE_OBJECTS}, got m={m}, n={n}"
        )
    finite = np.isfinite(costs.values)
    found: list[tuple[int, ...]] = []

    def descend(j: int, used: frozenset, prefix: tuple[int, ...]) -> None:
        if j == n:
            found.append(prefix)
            return
        for i in range(m):
            if i not in used and finite[i, j]:
                descend(j + 1, used | {i}, prefix + (i,))
        if finite[m + j, j]:
            descend(j + 1, used, prefix + (PPP,))

    descend(0, frozenset(), ())
    out = [Assignment(t, costs.cost_of(t)) for t in found]
    out.sort(key=lambda a: (a.total_cost, a.gt_to_target))
    return out

"""
PMB-NLL Scoring
===============

Negative log-likelihood of a ground-truth set under a predicted Poisson
multi-Bernoulli density, approximated by the Q most likely assignments:

    NLL ~= lambda-bar - log sum_{q=1..Q} exp(ll_q)

Murty returns assignment costs of the normalized cost matrix, so the
per-assignment log-likelihood is rebuilt as

    ll_q = -cost_q + sum_i log(1 - r_i)

restoring the prod_i (1 - r_i) factor; exp(-lambda-bar) is restored by the
leading lambda-bar. When some r_i is within 1e-9 of 1 that constant is
-inf (or numerically useless), so the Q best assignments are ranked on a
clamped copy and each one's log-likelihood is evaluated directly from its
structure with the true r.

Sections:
    1. PMB / MB NLL
    2. Decomposition
    3. MB-NLL training loss
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from pmb_nll.assignment import (
    CostMatrix,
    cost_matrix_from_log_likelihoods,
    murty_k_best,
    solve_optimal,
)
from pmb_nll.config import DEFAULT_Q, R_BOUNDARY_EPS, R_CLAMP_EPS
from pmb_nll.density import PairwiseLogLikelihoods, log_sum_exp, pairwise_log_likelihoods
from pmb_nll.errors import KinkError
from pmb_nll.types import (
    PPP,
    Assignment,
    BernoulliComponent,
    BoxFamily,
    GroundTruthSet,
    NllDecomposition,
    NllReport,
    PmbDensity,
    TermContribution,
)

logger = logging.getLogger(__name__)


# =============================================================================
# SECTION 1: PMB / MB NLL
# =============================================================================


def _log_likelihood_from_tables(tables: PairwiseLogLikelihoods, assignment: Assignment) -> float:
    m = tables.log_r.shape[0]
    terms = [float(tables.log_detect[i, j]) for i, j in assignment.matched_pairs()]
    terms += [float(tables.log_1mr[i]) for i in assignment.unmatched_bernoullis(m)]
    terms += [float(tables.log_intensity[j]) for j in assignment.ppp_objects()]
    if any(t == -math.inf for t in terms):
        return -math.inf
    return math.fsum(terms)


def assignment_log_likelihood(pmb: PmbDensity, gts: GroundTruthSet, assignment: Assignment) -> float:
    """
    Log of one assignment's term of the PMB density, without exp(-lambda-bar).

    Matched Bernoullis give log(r_i p_i(y_j)), unmatched ones log(1 - r_i),
    PPP-matched objects log lambda(y_j).
    """
    return _log_likelihood_from_tables(pairwise_log_likelihoods(pmb, gts), assignment)


def pmb_nll(pmb: PmbDensity, gts: GroundTruthSet, q: int = DEFAULT_Q) -> NllReport:
    """
    Approximate PMB-NLL over the q most likely assignments.

    Args:
        pmb: Predicted density (Bernoullis + Poisson intensity).
        gts: Realized ground-truth set.
        q: Number of assignments kept (>= 1).

    Returns:
        NllReport with the total NLL (+inf when no assignment has nonzero
        likelihood), the retained log-likelihoods in descending order, the
        most likely assignment and its decomposition.

    Example:
        >>> pmb_nll(PmbDensity((bernoulli_r075,)), GroundTruthSet(()), q=1).nll
        1.3862943611198906
    """
    if q < 1:
        raise ValueError(f"q must be at least 1, got {q}")

    tables = pairwise_log_likelihoods(pmb, gts)
    r = pmb.existence_probabilities()
    boundary = bool(r.size) and float(r.max()) >= 1.0 - R_BOUNDARY_EPS

    if boundary:
        ranking = pairwise_log_likelihoods(pmb.with_clamped_existence(1.0 - R_CLAMP_EPS), gts)
    else:
        ranking = tables
    costs = cost_matrix_from_log_likelihoods(ranking)
    assignments = murty_k_best(costs, q)

    if not assignments:
        logger.debug("no feasible assignment for m=%d, n=%d", pmb.num_bernoullis, len(gts))
        return NllReport(
            nll=math.inf,
            per_assignment_loglik=(),
            best_assignment=None,
            decomposition=_unattainable_decomposition(tables, gts),
            q_used=0,
        )

    if boundary:
        lls = [_log_likelihood_from_tables(tables, a) for a in assignments]
    else:
        constant = math.fsum(float(v) for v in tables.log_1mr)
        lls = [-a.total_cost + constant for a in assignments]

    order = sorted(range(len(lls)), key=lambda k: -lls[k])
    lls = [lls[k] for k in order]
    best = assignments[order[0]]

    total = log_sum_exp(lls)
    nll = math.inf if total == -math.inf else tables.expected_cardinality - total

    return NllReport(
        nll=nll,
        per_assignment_loglik=tuple(lls),
        best_assignment=best,
        decomposition=_decompose_from_tables(tables, best, gts),
        q_used=len(assignments),
    )


def mb_nll(mb: Sequence[BernoulliComponent], gts: GroundTruthSet, q: int = DEFAULT_Q) -> NllReport:
    """MB-NLL: pmb_nll with an empty Poisson intensity (+inf when n > m)."""
    return pmb_nll(PmbDensity.multi_bernoulli(mb), gts, q)


# =============================================================================
# SECTION 2: Decomposition
# =============================================================================


def _decompose_from_tables(
    tables: PairwiseLogLikelihoods,
    assignment: Assignment,
    gts: GroundTruthSet,
) -> NllDecomposition:
    m = tables.log_r.shape[0]
    contributions: list[TermContribution] = []
    classification: list[float] = []
    regression: list[float] = []
    for i, j in assignment.matched_pairs():
        area = gts[j].box.area
        cls_term = -float(tables.log_r[i] + tables.log_cls[i, j])
        reg_term = -float(tables.log_reg[i, j])
        classification.append(cls_term)
        regression.append(reg_term)
        contributions.append(TermContribution("classification", cls_term, area))
        contributions.append(TermContribution("regression", reg_term, area))

    false_detection: list[float] = []
    unmatched = assignment.unmatched_bernoullis(m)
    for i in unmatched:
        fp_term = -float(tables.log_1mr[i])
        false_detection.append(fp_term)
        contributions.append(TermContribution("false_detection", fp_term))

    missed: list[float] = []
    ppp_objects = assignment.ppp_objects()
    for j in ppp_objects:
        miss_term = -float(tables.log_intensity[j])
        missed.append(miss_term)
        contributions.append(TermContribution("missed_match", miss_term, gts[j].box.area))

    return NllDecomposition(
        regression=_sum(regression),
        classification=_sum(classification),
        false_detection=_sum(false_detection),
        missed_match=_sum(missed),
        ppp_rate=tables.expected_cardinality,
        num_matched=len(regression),
        num_unmatched=len(unmatched),
        num_ppp=len(ppp_objects),
        contributions=tuple(contributions),
    )


def _sum(values: list[float]) -> float:
    if any(math.isinf(v) for v in values):
        return math.fsum(v for v in values if math.isinf(v))
    return math.fsum(values)


def _unattainable_decomposition(tables: PairwiseLogLikelihoods, gts: GroundTruthSet) -> NllDecomposition:
    """Every object unexplainable: charged to missed_match as +inf."""
    return NllDecomposition(
        missed_match=math.inf if len(gts) else 0.0,
        ppp_rate=tables.expected_cardinality,
        num_unmatched=int(tables.log_r.shape[0]),
        num_ppp=len(gts),
    )


def decompose(pmb: PmbDensity, gts: GroundTruthSet) -> NllDecomposition:
    """
    Split the single-best-assignment NLL into its error sources.

    classification = -sum log(r_i p_cls(c_j)) and regression = -sum log p_reg(b_j)
    over matched pairs; false_detection = -sum log(1 - r_i) over unmatched
    Bernoullis; missed_match = -sum log lambda(y_j) over PPP-matched objects;
    ppp_rate = lambda-bar. The five terms sum to the Q=1 NLL.
    """
    return pmb_nll(pmb, gts, q=1).decomposition


# =============================================================================
# SECTION 3: MB-NLL training loss
# =============================================================================


@dataclass(frozen=True, eq=False)
class LossGradients:
    """Training loss with partial derivatives per prediction (assignment held fixed)."""

    loss: float
    assignment: Assignment
    d_r: np.ndarray  # (m,)
    d_mean: np.ndarray  # (m, 4)
    d_scale: np.ndarray  # (m, 4)


def training_matching_costs(preds: Sequence[BernoulliComponent], gts: GroundTruthSet) -> CostMatrix:
    """
    Matching costs used during training: -log(r p_cls(c) / (1 - r)) + ||b - b_hat||_2.

    The L2 distance between box means replaces the regression log-density;
    the PPP block is entirely forbidden.
    """
    pmb = PmbDensity.multi_bernoulli(preds)
    tables = pairwise_log_likelihoods(pmb, gts)
    if np.isneginf(tables.log_1mr).any():
        raise ValueError("training matching needs r < 1 for every prediction")
    m, n = len(preds), len(gts)
    values = np.full((m + n, n), np.inf)
    if m and n:
        means = np.array([p.box.mean.as_tuple() for p in preds], dtype=float)
        l2 = np.linalg.norm(means[:, None, :] - gts.boxes()[None, :, :], axis=2)
        with np.errstate(invalid="ignore"):
            upper = -(tables.log_r[:, None] + tables.log_cls - tables.log_1mr[:, None]) + l2
        values[:m, :] = np.where(np.isnan(upper), np.inf, upper)
    return CostMatrix(values, m)


def mb_loss_for_assignment(
    preds: Sequence[BernoulliComponent],
    gts: GroundTruthSet,
    assignment: Assignment,
) -> float:
    """
    True MB-NLL of one fixed assignment, normalized by the number of predictions.

    Matched: -log(r p_cls(c)) - log p_reg(b). Unmatched: -log(1 - r).
    """
    if PPP in assignment.gt_to_target:
        raise ValueError("training assignments cannot use the PPP")
    m = len(preds)
    if m == 0:
        return 0.0
    tables = pairwise_log_likelihoods(PmbDensity.multi_bernoulli(preds), gts)
    return -_log_likelihood_from_tables(tables, assignment) / m


def training_loss_mb(
    preds: Sequence[BernoulliComponent],
    gts: GroundTruthSet,
) -> tuple[float, Assignment]:
    """
    MB-NLL training loss (Q = 1, PPP ignored, L2 matching).

    Args:
        preds: Predictions for one image (at least as many as objects).
        gts: Ground-truth objects.

    Returns:
        (loss, assignment) where loss is the MB-NLL of the L2-matched
        assignment divided by len(preds).

    Raises:
        ValueError: Fewer predictions than objects, or no finite matching.
    """
    if len(preds) < len(gts):
        raise ValueError(
            f"training needs at least as many predictions as objects, got {len(preds)} < {len(gts)}"
        )
    assignment = solve_optimal(training_matching_costs(preds, gts))
    if assignment is None:
        raise ValueError("no finite matching between predictions and objects")
    return mb_loss_for_assignment(preds, gts, assignment), assignment


def training_loss_gradients(
    preds: Sequence[BernoulliComponent],
    gts: GroundTruthSet,
) -> LossGradients:
    """
    Analytic gradients of the training loss w.r.t. r, box means and Laplace scales.

    The assignment from training_loss_mb is held fixed. For a matched
    prediction with offset delta = b - mean:

        d/dr     = -1 / (m r)
        d/dmean  = -sign(delta) / (m s)
        d/dscale = (1/s - |delta| / s^2) / m

    and for an unmatched one d/dr = 1 / (m (1 - r)).

    Raises:
        ValueError: Non-Laplace predictions or r outside (0, 1).
        KinkError: A matched coordinate equals its mean exactly.
    """
    for k, p in enumerate(preds):
        if p.box.family is not BoxFamily.LAPLACE:
            raise ValueError(f"prediction {k}: gradients are defined for the Laplace family only")
        if not 0.0 < p.r < 1.0:
            raise ValueError(f"prediction {k}: gradients need r in (0, 1), got {p.r!r}")

    loss, assignment = training_loss_mb(preds, gts)
    m = len(preds)
    d_r = np.zeros(m)
    d_mean = np.zeros((m, 4))
    d_scale = np.zeros((m, 4))

    matched = dict(assignment.matched_pairs())
    for i, pred in enumerate(preds):
        if i not in matched:
            d_r[i] = 1.0 / (m * (1.0 - pred.r))
            continue
        delta = gts[matched[i]].box.as_array() - pred.box.mean.as_array()
        zero = np.flatnonzero(delta == 0.0)
        if zero.size:
            raise KinkError(i, int(zero[0]))
        s = np.asarray(pred.box.scale_params)
        d_r[i] = -1.0 / (m * pred.r)
        d_mean[i] = -np.sign(delta) / (m * s)
        d_scale[i] = (1.0 / s - np.abs(delta) / s**2) / m

    return LossGradients(loss, assignment, d_r, d_mean, d_scale)

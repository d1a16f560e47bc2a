"""
DETR Matching vs MB Matching
============================

Set-based detectors pick a permutation sigma of their N predictions over the
ground truth padded with background slots. DETR's matching cost is

    L_match(y, y_hat) = -1[c != bg] p_hat(c) + 1[c != bg] (lambda_iou L_iou + lambda_l1 ||b - b_hat||_1)

with L_iou the generalized-IoU loss 1 - GIoU. The MB-NLL counterpart is
-log p_hat(c) with p_hat(bg) = 1 - r, plus the negative box log-density for
objects. Under a constant Laplace scale s the box term becomes
||b - b_hat||_1 / s + 4 log(2 s); the constant is paid once per object
slot, so it never changes the argmin, and lambda_l1 = 1/s.

Sections:
    1. Generalized IoU
    2. Matching costs
    3. Optimal permutation
    4. Per-image comparison
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from pmb_nll.boxes import box_areas, intersection_areas
from pmb_nll.config import (
    DEFAULT_CONSTANT_SCALE,
    DEFAULT_LAMBDA_IOU,
    DEFAULT_LAMBDA_L1,
    MATCHING_TIE_ATOL,
    MATCHING_TIE_RTOL,
)
from pmb_nll.density import log_box_density
from pmb_nll.types import BernoulliComponent, BoundingBox, GroundTruthObject, GroundTruthSet

# gt is None for a background (padding) slot
MatchingCost = Callable[[Optional[GroundTruthObject], BernoulliComponent], float]


# =============================================================================
# SECTION 1: Generalized IoU
# =============================================================================


def generalized_iou(a: BoundingBox, b: BoundingBox) -> float:
    """
    GIoU = IoU - |C \\ (A u B)| / |C| with C the smallest enclosing box.

    Degenerate cases: zero union gives IoU 0; a zero-area enclosing box
    gives GIoU = IoU.
    """
    a_arr, b_arr = a.as_array()[None, :], b.as_array()[None, :]
    inter = float(intersection_areas(a_arr, b_arr)[0, 0])
    union = float(box_areas(a_arr)[0] + box_areas(b_arr)[0]) - inter
    iou = inter / union if union > 0.0 else 0.0

    lt = np.minimum(a_arr[0, :2], b_arr[0, :2])
    rb = np.maximum(a_arr[0, 2:], b_arr[0, 2:])
    wh = np.clip(rb - lt, 0.0, None)
    enclosure = float(wh[0] * wh[1])
    if enclosure <= 0.0:
        return iou
    return iou - (enclosure - union) / enclosure


def giou_loss(a: BoundingBox, b: BoundingBox) -> float:
    return 1.0 - generalized_iou(a, b)


def _l1(a: BoundingBox, b: BoundingBox) -> float:
    return float(np.abs(a.as_array() - b.as_array()).sum())


def _neg_log(x: float) -> float:
    return -math.log(x) if x > 0.0 else math.inf


# =============================================================================
# SECTION 2: Matching costs
# =============================================================================


def detr_matching_cost(
    gt: Optional[GroundTruthObject],
    pred: BernoulliComponent,
    lambda_iou: float = DEFAULT_LAMBDA_IOU,
    lambda_l1: float = DEFAULT_LAMBDA_L1,
    log_class: bool = False,
) -> float:
    """
    DETR Hungarian matching cost for one (slot, prediction) pair.

    Args:
        gt: Ground-truth object, or None for a background slot.
        pred: Prediction; p_hat(c) = r p_cls(c).
        lambda_iou: Weight of the GIoU loss.
        lambda_l1: Weight of the L1 box distance.
        log_class: Use -log p_hat(c) for objects and -log p_hat(bg) = -log(1 - r)
            for background instead of DETR's -p_hat(c) and 0.

    Returns:
        The matching cost; 0 for background unless log_class is set.
    """
    if gt is None:
        return _neg_log(1.0 - pred.r) if log_class else 0.0
    p_hat = pred.r * pred.cls.probs[gt.class_id]
    cls_term = _neg_log(p_hat) if log_class else -p_hat
    cost = cls_term + lambda_l1 * _l1(gt.box, pred.box.mean)
    if lambda_iou:
        cost += lambda_iou * giou_loss(gt.box, pred.box.mean)
    return cost


def mb_matching_cost_constant_scale(
    gt: Optional[GroundTruthObject],
    pred: BernoulliComponent,
    s: float = DEFAULT_CONSTANT_SCALE,
) -> float:
    """MB matching cost under a constant Laplace scale s, constant terms dropped."""
    if s <= 0.0:
        raise ValueError(f"scale must be positive, got {s!r}")
    if gt is None:
        return _neg_log(1.0 - pred.r)
    return _neg_log(pred.r * pred.cls.probs[gt.class_id]) + _l1(gt.box, pred.box.mean) / s


def mb_matching_cost(gt: Optional[GroundTruthObject], pred: BernoulliComponent) -> float:
    """Full MB cost: -log(1 - r) for background, -log(r p_cls(c) p_reg(b)) for objects."""
    if gt is None:
        return _neg_log(1.0 - pred.r)
    cls_term = _neg_log(pred.r * pred.cls.probs[gt.class_id])
    if cls_term == math.inf:
        return math.inf
    return cls_term - log_box_density(pred.box, gt.box)


# =============================================================================
# SECTION 3: Optimal permutation
# =============================================================================


def _padded_cost_matrix(
    cost_fn: MatchingCost,
    preds: Sequence[BernoulliComponent],
    gts: GroundTruthSet,
) -> np.ndarray:
    N, n = len(preds), len(gts)
    slots: list[Optional[GroundTruthObject]] = list(gts) + [None] * (N - n)
    # rows: padded ground-truth slots, columns: predictions
    return np.array([[cost_fn(slot, pred) for pred in preds] for slot in slots], dtype=float).reshape(N, N)


def optimal_permutation(
    cost_fn: MatchingCost,
    preds: Sequence[BernoulliComponent],
    gts: GroundTruthSet,
) -> tuple[int, ...]:
    """
    Minimum-cost permutation over ground truth padded with background to N slots.

    Returns:
        sigma with sigma[i] the prediction index given to slot i; slots
        [0, n) are the objects, [n, N) background.

    Raises:
        ValueError: Fewer predictions than objects, or every permutation has
            infinite cost.
    """
    N, n = len(preds), len(gts)
    if N < n:
        raise ValueError(f"need at least as many predictions as objects, got {N} < {n}")
    if N == 0:
        return ()
    costs = _padded_cost_matrix(cost_fn, preds, gts)
    rows, cols = linear_sum_assignment(costs)
    sigma = np.empty(N, dtype=int)
    sigma[rows] = cols
    return tuple(int(c) for c in sigma)


def permutation_cost(
    cost_fn: MatchingCost,
    preds: Sequence[BernoulliComponent],
    gts: GroundTruthSet,
    sigma: Sequence[int],
) -> float:
    slots: list[Optional[GroundTruthObject]] = list(gts) + [None] * (len(preds) - len(gts))
    return math.fsum(cost_fn(slot, preds[k]) for slot, k in zip(slots, sigma))


def _equal_cost(a: float, b: float) -> bool:
    return math.isclose(a, b, rel_tol=MATCHING_TIE_RTOL, abs_tol=MATCHING_TIE_ATOL)


def permutations_agree(
    cost_a: MatchingCost,
    cost_b: MatchingCost,
    preds: Sequence[BernoulliComponent],
    gts: GroundTruthSet,
    sigma_a: Sequence[int],
    sigma_b: Sequence[int],
) -> bool:
    """
    Whether two optimal permutations amount to the same matching decision.

    They agree when they give every object the same prediction, or when each
    is also optimal under the other's cost: an exact tie leaves both argmins
    valid, and the solver's pick between them is arbitrary.
    """
    n = len(gts)
    if tuple(sigma_a[:n]) == tuple(sigma_b[:n]):
        return True
    return _equal_cost(
        permutation_cost(cost_a, preds, gts, sigma_a), permutation_cost(cost_a, preds, gts, sigma_b)
    ) and _equal_cost(
        permutation_cost(cost_b, preds, gts, sigma_a), permutation_cost(cost_b, preds, gts, sigma_b)
    )


# =============================================================================
# SECTION 4: Per-image comparison
# =============================================================================


@dataclass(frozen=True)
class MatchingComparison:
    """
    DETR vs MB optimal permutations for one image.

    detr_pairs / mb_pairs give the prediction matched to each object slot;
    disagreements lists (object index, DETR prediction, MB prediction) and
    is empty when the two permutations tie under both costs.
    """

    detr_pairs: tuple[int, ...]
    mb_pairs: tuple[int, ...]
    constant_scale_pairs: tuple[int, ...]
    disagreements: tuple[tuple[int, int, int], ...]
    constant_scale_agree: bool

    @property
    def agree(self) -> bool:
        return not self.disagreements


def compare_matchings(
    preds: Sequence[BernoulliComponent],
    gts: GroundTruthSet,
    s: float = DEFAULT_CONSTANT_SCALE,
    lambda_iou: float = DEFAULT_LAMBDA_IOU,
    lambda_l1: float = DEFAULT_LAMBDA_L1,
    log_class: bool = False,
) -> MatchingComparison:
    """
    Compare which prediction each object receives under DETR and MB matching.

    The MB side uses each prediction's own box distribution (mb_matching_cost);
    the constant-scale MB matching with scale s is reported alongside.
    """
    n = len(gts)

    def detr_cost(gt: Optional[GroundTruthObject], pred: BernoulliComponent) -> float:
        return detr_matching_cost(gt, pred, lambda_iou, lambda_l1, log_class)

    def constant_cost(gt: Optional[GroundTruthObject], pred: BernoulliComponent) -> float:
        return mb_matching_cost_constant_scale(gt, pred, s)

    detr_sigma = optimal_permutation(detr_cost, preds, gts)
    mb_sigma = optimal_permutation(mb_matching_cost, preds, gts)
    constant_sigma = optimal_permutation(constant_cost, preds, gts)

    disagreements: tuple[tuple[int, int, int], ...] = ()
    if not permutations_agree(detr_cost, mb_matching_cost, preds, gts, detr_sigma, mb_sigma):
        disagreements = tuple(
            (j, d, b) for j, (d, b) in enumerate(zip(detr_sigma[:n], mb_sigma[:n])) if d != b
        )
    return MatchingComparison(
        detr_sigma[:n],
        mb_sigma[:n],
        constant_sigma[:n],
        disagreements,
        permutations_agree(constant_cost, mb_matching_cost, preds, gts, constant_sigma, mb_sigma),
    )

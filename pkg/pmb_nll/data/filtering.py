from __future__ import annotations

from typing import Sequence

import numpy as np

from pmb_nll.boxes import pairwise_iou
from pmb_nll.config import DEFAULT_CLASS_WISE_NMS, DEFAULT_NMS_IOU, DEFAULT_TOP_K
from pmb_nll.types import BernoulliComponent


def _rank_by_r(preds: Sequence[BernoulliComponent]) -> np.ndarray:
    # stable: equal r keeps input order
    r = np.array([p.r for p in preds], dtype=float)
    return np.argsort(-r, kind="stable")


def nms_keep(
    preds: Sequence[BernoulliComponent],
    iou_threshold: float = DEFAULT_NMS_IOU,
    class_wise: bool = DEFAULT_CLASS_WISE_NMS,
) -> list[int]:
    """
    Greedy NMS on box means in descending r order (ties by input index).

    A prediction is suppressed when its IoU with an already kept one
    exceeds iou_threshold; with class_wise only predictions sharing the
    most likely class suppress each other.

    Returns:
        Indices of kept predictions, sorted ascending.
    """
    if not preds:
        return []
    order = _rank_by_r(preds)
    means = np.array([p.box.mean.as_tuple() for p in preds], dtype=float)
    labels = np.array([p.cls.argmax() for p in preds], dtype=int)
    iou = pairwise_iou(means, means)

    kept: list[int] = []
    suppressed = np.zeros(len(preds), dtype=bool)
    for idx in order:
        if suppressed[idx]:
            continue
        kept.append(int(idx))
        overlap = iou[idx] > iou_threshold
        if class_wise:
            overlap &= labels == labels[idx]
        suppressed |= overlap
    return sorted(kept)


def inference_filter(
    preds: Sequence[BernoulliComponent],
    nms_iou: float = DEFAULT_NMS_IOU,
    top_k: int = DEFAULT_TOP_K,
    apply_nms: bool = True,
    class_wise: bool = DEFAULT_CLASS_WISE_NMS,
) -> list[BernoulliComponent]:
    """
    COCO-style inference filtering: optional NMS, then the top_k highest r.

    No confidence threshold is applied. NMS is meant to be switched off for
    set-based detectors. Survivors keep their input order.

    Args:
        preds: Raw detections for one image.
        nms_iou: IoU above which a lower-r duplicate is removed.
        top_k: Maximum number of detections kept.
        apply_nms: Run NMS before the top-k cut.
        class_wise: Restrict suppression to predictions with the same argmax class.

    Returns:
        Filtered detections.
    """
    if top_k < 0:
        raise ValueError(f"top_k must be nonnegative, got {top_k}")
    candidates = nms_keep(preds, nms_iou, class_wise) if apply_nms else list(range(len(preds)))
    if len(candidates) > top_k:
        subset = [preds[i] for i in candidates]
        best = _rank_by_r(subset)[:top_k]
        candidates = sorted(candidates[k] for k in best)
    return [preds[i] for i in candidates]

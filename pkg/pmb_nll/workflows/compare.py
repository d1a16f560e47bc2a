"""DETR vs MB optimal-permutation agreement over a dataset."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import pandas as pd

from pmb_nll.config import DEFAULT_CONSTANT_SCALE, DEFAULT_INCLUDE_CROWD, DEFAULT_LAMBDA_IOU, DEFAULT_LAMBDA_L1
from pmb_nll.data.coco import Dataset
from pmb_nll.detr import compare_matchings
from pmb_nll.types import BernoulliComponent

logger = logging.getLogger(__name__)

COMPARISON_COLUMNS = [
    "image_id",
    "num_objects",
    "num_predictions",
    "skipped",
    "reason",
    "agree",
    "constant_scale_agree",
    "num_disagreements",
]
DISAGREEMENT_COLUMNS = ["image_id", "object_index", "class_id", "detr_prediction", "mb_prediction"]


@dataclass(frozen=True)
class ComparisonSettings:
    s: float = DEFAULT_CONSTANT_SCALE
    lambda_iou: float = DEFAULT_LAMBDA_IOU
    lambda_l1: float = DEFAULT_LAMBDA_L1
    log_class: bool = False
    include_crowd: bool = DEFAULT_INCLUDE_CROWD


def compare_dataset(
    dataset: Dataset,
    predictions: Mapping[int, Sequence[BernoulliComponent]],
    settings: ComparisonSettings = ComparisonSettings(),
) -> tuple[pd.DataFrame, pd.DataFrame]:
    """
    Per-image agreement between DETR and MB matching.

    Images with fewer predictions than objects, or where every permutation
    has infinite cost, are kept as skipped rows with a reason.

    Returns:
        (per-image rows, disagreement listing), both sorted by image_id.
    """
    rows = []
    listing = []
    for image_id in dataset.image_ids:
        gts = dataset.objects_for(image_id, settings.include_crowd)
        preds = list(predictions.get(image_id, []))
        row = {
            "image_id": image_id,
            "num_objects": len(gts),
            "num_predictions": len(preds),
            "skipped": False,
            "reason": "",
            "agree": None,
            "constant_scale_agree": None,
            "num_disagreements": None,
        }
        if len(preds) < len(gts):
            logger.warning("image %d skipped: %d predictions for %d objects", image_id, len(preds), len(gts))
            row.update(skipped=True, reason="prediction deficit")
            rows.append(row)
            continue
        try:
            result = compare_matchings(
                preds, gts, s=settings.s, lambda_iou=settings.lambda_iou,
                lambda_l1=settings.lambda_l1, log_class=settings.log_class,
            )
        except ValueError as exc:
            logger.warning("image %d skipped: %s", image_id, exc)
            row.update(skipped=True, reason="infeasible matching")
            rows.append(row)
            continue
        row.update(
            agree=result.agree,
            constant_scale_agree=result.constant_scale_agree,
            num_disagreements=len(result.disagreements),
        )
        rows.append(row)
        for j, detr_k, mb_k in result.disagreements:
            listing.append(
                {
                    "image_id": image_id,
                    "object_index": j,
                    "class_id": gts[j].class_id,
                    "detr_prediction": detr_k,
                    "mb_prediction": mb_k,
                }
            )
    return pd.DataFrame(rows, columns=COMPARISON_COLUMNS), pd.DataFrame(listing, columns=DISAGREEMENT_COLUMNS)


def agreement_rate(rows: pd.DataFrame) -> float:
    """Share of compared (non-skipped) images whose object matchings agree; NaN if none."""
    compared = rows[~rows["skipped"].astype(bool)]
    if compared.empty:
        return float("nan")
    return float(compared["agree"].astype(bool).mean())

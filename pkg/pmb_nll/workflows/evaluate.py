"""
Dataset evaluation: read -> inference_filter -> build_pmb -> pmb_nll per image.

Images are scored independently, optionally in a process pool; results are
always returned sorted by image_id so that the report does not depend on
the number of workers.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

from pmb_nll.config import (
    DEFAULT_CLASS_WISE_NMS,
    DEFAULT_INCLUDE_CROWD,
    DEFAULT_NMS_IOU,
    DEFAULT_Q,
    DEFAULT_R_THRESHOLD,
    DEFAULT_TOP_K,
    R_CLAMP_EPS,
    resolve_jobs,
)
from pmb_nll.data.coco import Dataset
from pmb_nll.data.filtering import inference_filter
from pmb_nll.errors import SchemaError
from pmb_nll.ppp import build_pmb
from pmb_nll.reporting import ImageResult
from pmb_nll.scoring import pmb_nll
from pmb_nll.types import BernoulliComponent, GroundTruthSet

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvaluationSettings:
    q: int = DEFAULT_Q
    r_threshold: float = DEFAULT_R_THRESHOLD
    apply_nms: bool = True
    nms_iou: float = DEFAULT_NMS_IOU
    top_k: int = DEFAULT_TOP_K
    class_wise_nms: bool = DEFAULT_CLASS_WISE_NMS
    clamp_r: bool = False
    include_crowd: bool = DEFAULT_INCLUDE_CROWD

    def __post_init__(self) -> None:
        if self.q < 1:
            raise ValueError(f"q must be at least 1, got {self.q}")
        if not 0.0 <= self.r_threshold <= 1.0:
            raise ValueError(f"r_threshold must lie in [0, 1], got {self.r_threshold!r}")


def clamp_existence(preds: Sequence[BernoulliComponent], max_r: float = 1.0 - R_CLAMP_EPS) -> list[BernoulliComponent]:
    out = [p.with_r(max_r) if p.r > max_r else p for p in preds]
    clamped = sum(1 for p in preds if p.r > max_r)
    if clamped:
        logger.debug("clamped %d existence probabilities to %r", clamped, max_r)
    return out


def evaluate_image(
    image_id: int,
    preds: Sequence[BernoulliComponent],
    gts: GroundTruthSet,
    settings: EvaluationSettings = EvaluationSettings(),
) -> ImageResult:
    """Score one image; its decomposition is that of the most likely assignment."""
    kept = inference_filter(
        preds,
        nms_iou=settings.nms_iou,
        top_k=settings.top_k,
        apply_nms=settings.apply_nms,
        class_wise=settings.class_wise_nms,
    )
    if settings.clamp_r:
        kept = clamp_existence(kept)
    pmb = build_pmb(kept, settings.r_threshold)
    report = pmb_nll(pmb, gts, settings.q)
    if report.is_infinite:
        logger.debug("image %d: infinite NLL (%d objects, %d Bernoullis)", image_id, len(gts), pmb.num_bernoullis)
    return ImageResult(image_id=image_id, report=report, num_objects=len(gts), num_predictions=len(kept))


def _evaluate_task(task: tuple[int, list[BernoulliComponent], GroundTruthSet, EvaluationSettings]) -> ImageResult:
    return evaluate_image(*task)


def evaluate_dataset(
    dataset: Dataset,
    predictions: Mapping[int, Sequence[BernoulliComponent]],
    settings: EvaluationSettings = EvaluationSettings(),
    jobs: Optional[int] = None,
) -> list[ImageResult]:
    """
    Evaluate every ground-truth image; images without predictions get an empty set.

    Args:
        dataset: Ground truth.
        predictions: image_id -> raw detections.
        settings: Evaluation protocol.
        jobs: Worker processes (None resolves PMB_NLL_JOBS, then the CPU count).

    Returns:
        One ImageResult per image, sorted by image_id.

    Raises:
        SchemaError: Predictions reference an image absent from the ground truth.
    """
    known = set(dataset.image_ids)
    unknown = sorted(set(predictions) - known)
    if unknown:
        raise SchemaError("predictions reference an image absent from the ground truth", image_id=unknown[0])

    tasks = [
        (image_id, list(predictions.get(image_id, [])), dataset.objects_for(image_id, settings.include_crowd), settings)
        for image_id in dataset.image_ids
    ]
    workers = resolve_jobs(jobs)
    logger.info("evaluating %d images with %d worker(s), Q=%d", len(tasks), workers, settings.q)

    if workers <= 1 or len(tasks) <= 1:
        results = [_evaluate_task(t) for t in tasks]
    else:
        chunksize = max(1, len(tasks) // (4 * workers))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_evaluate_task, tasks, chunksize=chunksize))
    return sorted(results, key=lambda r: r.image_id)

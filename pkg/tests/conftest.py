from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from pmb_nll.types import (
    BernoulliComponent,
    BoundingBox,
    BoxDistribution,
    ClassDistribution,
    GroundTruthObject,
    GroundTruthSet,
)


def laplace_bernoulli(r, probs, mean, scales=(1.0, 1.0, 1.0, 1.0)) -> BernoulliComponent:
    return BernoulliComponent(r, ClassDistribution(tuple(probs)), BoxDistribution.laplace(BoundingBox(*mean), scales))


def gt(class_id, box, **kwargs) -> GroundTruthObject:
    return GroundTruthObject(class_id, BoundingBox(*box), **kwargs)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def bernoulli_r075():
    return laplace_bernoulli(0.75, (0.5, 0.5), (0.0, 0.0, 10.0, 10.0))


@pytest.fixture
def two_object_scene():
    """Two confident Bernoullis over two objects of different classes (pure MB)."""
    preds = (
        laplace_bernoulli(0.9, (0.8, 0.2), (10.0, 10.0, 50.0, 50.0), (2.0, 2.0, 2.0, 2.0)),
        laplace_bernoulli(0.7, (0.3, 0.7), (60.0, 10.0, 100.0, 50.0), (2.0, 2.0, 2.0, 2.0)),
    )
    objects = GroundTruthSet((gt(0, (11.0, 9.0, 51.0, 49.0)), gt(1, (62.0, 11.0, 99.0, 52.0))))
    return preds, objects


@pytest.fixture
def tight_loose_scene():
    """
    One object; a tight prediction 4 px off per coordinate and a loose one 8 px off.

    Equal r and class probabilities, so matching depends on the box terms only.
    """
    objects = GroundTruthSet((gt(0, (100.0, 100.0, 200.0, 200.0)),))
    red = laplace_bernoulli(0.8, (0.9, 0.1), (104.0, 104.0, 204.0, 204.0), (0.5,) * 4)
    green = laplace_bernoulli(0.8, (0.9, 0.1), (108.0, 108.0, 208.0, 208.0), (8.0,) * 4)
    return [red, green], objects


def detection_record(mean, scales, foreground, r):
    return {
        "box_mean": list(mean),
        "spatial": {"family": "laplace_scales", "params": list(scales)},
        "class": {"encoding": "foreground_probs", "values": list(foreground)},
        "r": r,
    }


@pytest.fixture
def toy_files(tmp_path: Path):
    """Three-image COCO ground truth plus one dataset-level prediction file."""
    gt_doc = {
        "images": [{"id": i, "width": 200, "height": 200} for i in (3, 1, 2)],
        "categories": [{"id": 7, "name": "cat"}, {"id": 9, "name": "dog"}],
        "annotations": [
            {"id": 10, "image_id": 1, "category_id": 7, "bbox": [10, 10, 40, 40], "iscrowd": 0},
            {"id": 11, "image_id": 1, "category_id": 9, "bbox": [100, 100, 50, 60], "iscrowd": 0},
            {"id": 12, "image_id": 2, "category_id": 9, "bbox": [5, 5, 20, 20], "iscrowd": 0},
            {"id": 13, "image_id": 2, "category_id": 7, "bbox": [0, 0, 200, 200], "iscrowd": 1},
        ],
    }
    preds_doc = {
        "schema_version": 1,
        "predictions": [
            {
                "schema_version": 1,
                "image_id": 1,
                "detections": [
                    detection_record((11, 9, 51, 49), (2, 2, 2, 2), (0.8, 0.2), 0.9),
                    detection_record((98, 102, 151, 161), (3, 3, 3, 3), (0.1, 0.9), 0.6),
                    detection_record((120, 20, 160, 60), (4, 4, 4, 4), (0.5, 0.5), 0.05),
                ],
            },
            {
                "schema_version": 1,
                "image_id": 2,
                "detections": [detection_record((6, 4, 26, 24), (1, 1, 1, 1), (0.2, 0.8), 0.7)],
            },
            {
                "schema_version": 1,
                "image_id": 3,
                "detections": [detection_record((50, 50, 90, 90), (2, 2, 2, 2), (0.6, 0.4), 0.3)],
            },
        ],
    }
    gt_path = tmp_path / "gt.json"
    preds_path = tmp_path / "preds.json"
    gt_path.write_text(json.dumps(gt_doc), encoding="utf-8")
    preds_path.write_text(json.dumps(preds_doc), encoding="utf-8")
    return gt_path, preds_path

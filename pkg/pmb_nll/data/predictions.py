"""
Prediction Interchange Format
=============================

Versioned, self-describing JSON documents, one per image:

    {
      "schema_version": 1,
      "image_id": 42,
      "detections": [
        {
          "box_mean": [x1, y1, x2, y2],
          "spatial": {"family": "laplace_scales" | "gaussian_sigma" | "cholesky_lower",
                      "params": [...]},
          "class": {"encoding": "foreground_probs" | "full_probs", "values": [...]},
          "r": 0.93
        }
      ]
    }

A dataset-level file wraps the per-image documents:
{"schema_version": 1, "predictions": [<per-image document>, ...]}. A
directory holds one per-image document per *.json file.

"r" is required with foreground_probs. With full_probs the last entry is the
background probability and r = 1 - p(bg).

Sections:
    1. Spatial / class decoding
    2. Reading
    3. Writing
"""

from __future__ import annotations

import json
import logging
import math
from pathlib import Path
from typing import Any, Mapping, Sequence, Union

import numpy as np

from pmb_nll.config import (
    CLASS_SUM_TOL,
    INPUT_PROB_SUM_TOL,
    PREDICTION_SCHEMA_VERSION,
    SUPPORTED_SCHEMA_VERSIONS,
)
from pmb_nll.data.coco import int_field, list_field, load_json
from pmb_nll.errors import SchemaError
from pmb_nll.types import (
    CHOLESKY_DIAGONAL,
    BernoulliComponent,
    BoundingBox,
    BoxDistribution,
    BoxFamily,
    ClassDistribution,
    LabelMap,
)

logger = logging.getLogger(__name__)

FAMILIES = ("laplace", "gaussian", "native")
SPATIAL_ENCODINGS = ("laplace_scales", "gaussian_sigma", "cholesky_lower")
CLASS_ENCODINGS = ("foreground_probs", "full_probs")

Predictions = dict[int, list[BernoulliComponent]]


# =============================================================================
# SECTION 1: Spatial / class decoding
# =============================================================================


def decode_spatial(mean: BoundingBox, encoding: str, params: Sequence[float], family: str) -> BoxDistribution:
    """
    Turn an encoded spatial distribution into the requested family.

    Laplace is built from Gaussian standard deviations via s = sigma / sqrt(2)
    (equal variance 2 s^2 = sigma^2); a Cholesky factor contributes only its
    diagonal. "native" keeps whatever family the encoding describes.

    Example:
        >>> decode_spatial(mean, "cholesky_lower", [1, 0, 2, 0, 0, 1, 0, 0, 0, 2], "laplace").scale_params
        (0.7071067811865475, 1.414213562373095, 0.7071067811865475, 1.414213562373095)
    """
    params = [float(v) for v in params]
    if family not in FAMILIES:
        raise SchemaError(f"unknown box family '{family}'", field="family")
    if encoding not in SPATIAL_ENCODINGS:
        raise SchemaError(f"unknown spatial encoding '{encoding}'", field="spatial.family")
    expected = 10 if encoding == "cholesky_lower" else 4
    if len(params) != expected:
        raise SchemaError(f"{encoding} needs {expected} parameters, got {len(params)}", field="spatial.params")
    if encoding == "cholesky_lower":
        diagonal = [params[k] for k in CHOLESKY_DIAGONAL]
    else:
        diagonal = params
    if any(not (d > 0.0 and math.isfinite(d)) for d in diagonal):
        raise SchemaError(f"scales must be positive and finite, got {diagonal}", field="spatial.params")

    if encoding == "laplace_scales":
        if family == "gaussian":
            return BoxDistribution.gaussian(mean, [s * math.sqrt(2.0) for s in params])
        return BoxDistribution.laplace(mean, params)

    sigmas = diagonal
    if family == "laplace":
        return BoxDistribution.laplace(mean, [sigma / math.sqrt(2.0) for sigma in sigmas])
    if encoding == "cholesky_lower":
        return BoxDistribution.cholesky(mean, params)
    return BoxDistribution.gaussian(mean, sigmas)


def decode_class(encoding: str, values: Sequence[float], r: Any, num_classes: int) -> tuple[float, ClassDistribution]:
    """Return (r, foreground class distribution conditioned on existence)."""
    probs = np.asarray([float(v) for v in values], dtype=float)
    if np.any(~np.isfinite(probs)) or np.any(probs < 0.0) or np.any(probs > 1.0):
        raise SchemaError("class probabilities must lie in [0, 1]", field="class.values")
    if abs(probs.sum() - 1.0) > INPUT_PROB_SUM_TOL:
        raise SchemaError(f"class probabilities sum to {probs.sum()!r}, not 1", field="class.values")

    if encoding == "foreground_probs":
        if len(probs) != num_classes:
            raise SchemaError(f"expected {num_classes} foreground probabilities, got {len(probs)}", field="class.values")
        if r is None:
            raise SchemaError("foreground_probs needs an existence probability 'r'", field="r")
        r = float(r)
        if not 0.0 <= r <= 1.0:
            raise SchemaError(f"r must lie in [0, 1], got {r!r}", field="r")
        foreground = probs
    elif encoding == "full_probs":
        if len(probs) != num_classes + 1:
            raise SchemaError(
                f"expected {num_classes + 1} probabilities (background last), got {len(probs)}", field="class.values"
            )
        r = 1.0 - float(probs[-1])
        if r <= 0.0:
            raise SchemaError("background probability 1 leaves no existence mass (r = 0)", field="class.values")
        foreground = probs[:-1] / r
    else:
        raise SchemaError(f"unknown class encoding '{encoding}'", field="class.encoding")

    # Inputs are accepted within INPUT_PROB_SUM_TOL; the stored distribution must sum to 1.
    total = math.fsum(foreground)
    if total <= 0.0:
        raise SchemaError("foreground probabilities are all zero", field="class.values")
    if abs(total - 1.0) > CLASS_SUM_TOL:
        foreground = foreground / total
    return r, ClassDistribution(tuple(float(p) for p in foreground))


# =============================================================================
# SECTION 2: Reading
# =============================================================================


def parse_detection(record: Mapping[str, Any], label_map: LabelMap, family: str) -> BernoulliComponent:
    if not isinstance(record, Mapping):
        raise SchemaError(f"detection must be a JSON object, got {type(record).__name__}")
    for key in ("box_mean", "spatial", "class"):
        if key not in record:
            raise SchemaError(f"detection is missing '{key}'", field=key)
    try:
        mean = BoundingBox.from_array(record["box_mean"])
    except (TypeError, ValueError) as exc:
        raise SchemaError(str(exc), field="box_mean") from exc
    spatial = record["spatial"]
    cls = record["class"]
    if not isinstance(spatial, Mapping) or "family" not in spatial or "params" not in spatial:
        raise SchemaError("spatial needs 'family' and 'params'", field="spatial")
    if not isinstance(cls, Mapping) or "encoding" not in cls or "values" not in cls:
        raise SchemaError("class needs 'encoding' and 'values'", field="class")
    r, class_dist = decode_class(cls["encoding"], cls["values"], record.get("r"), label_map.num_classes)
    box = decode_spatial(mean, spatial["family"], spatial["params"], family)
    return BernoulliComponent(r, class_dist, box)


def parse_image_document(doc: Mapping[str, Any], label_map: LabelMap, family: str) -> tuple[int, list[BernoulliComponent]]:
    if not isinstance(doc, Mapping):
        raise SchemaError("prediction document must be a JSON object")
    version = doc.get("schema_version")
    if version not in SUPPORTED_SCHEMA_VERSIONS:
        raise SchemaError(f"unsupported schema_version {version!r}", field="schema_version")
    if "image_id" not in doc:
        raise SchemaError("prediction document is missing 'image_id'", field="image_id")
    image_id = int_field(doc["image_id"], "prediction document", "image_id")
    preds: list[BernoulliComponent] = []
    detections = list_field(doc.get("detections", []), "prediction document", "detections", image_id)
    for k, record in enumerate(detections):
        try:
            preds.append(parse_detection(record, label_map, family))
        except SchemaError as exc:
            raise SchemaError(f"detections[{k}]: {exc}", image_id=image_id) from exc
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"detections[{k}]: {exc}", image_id=image_id) from exc
    return image_id, preds


def _merge(out: Predictions, image_id: int, preds: list[BernoulliComponent]) -> None:
    if image_id in out:
        raise SchemaError("image has more than one prediction document", image_id=image_id)
    out[image_id] = preds


def read_predictions(path: Union[str, Path], label_map: LabelMap, family: str = "laplace") -> Predictions:
    """
    Read predictions from a dataset-level file, a per-image file, or a directory.

    Args:
        path: JSON file or directory of per-image JSON files.
        label_map: Ground-truth label map (fixes the number of classes C).
        family: "laplace", "gaussian", or "native" box family.

    Returns:
        Mapping image_id -> list of BernoulliComponent, in file order.

    Raises:
        SchemaError: Unsupported version, bad scales or probabilities, r = 0
            with full_probs, missing class vector.
    """
    path = Path(path)
    out: Predictions = {}
    if path.is_dir():
        for file in sorted(path.glob("*.json")):
            _merge(out, *parse_image_document(load_json(file), label_map, family))
    else:
        payload = load_json(path)
        if isinstance(payload, Mapping) and "predictions" in payload:
            if payload.get("schema_version") not in SUPPORTED_SCHEMA_VERSIONS:
                raise SchemaError(
                    f"unsupported schema_version {payload.get('schema_version')!r}", field="schema_version"
                )
            for doc in list_field(payload["predictions"], str(path), "predictions"):
                _merge(out, *parse_image_document(doc, label_map, family))
        else:
            _merge(out, *parse_image_document(payload, label_map, family))
    logger.info("read %d detections for %d images from %s", sum(map(len, out.values())), len(out), path)
    return out


# =============================================================================
# SECTION 3: Writing
# =============================================================================


def encode_detection(pred: BernoulliComponent) -> dict[str, Any]:
    family = pred.box.family
    if family is BoxFamily.LAPLACE:
        encoding = "laplace_scales"
    elif family is BoxFamily.GAUSSIAN_DIAGONAL:
        encoding = "gaussian_sigma"
    else:
        encoding = "cholesky_lower"
    return {
        "box_mean": list(pred.box.mean.as_tuple()),
        "spatial": {"family": encoding, "params": list(pred.box.scale_params)},
        "class": {"encoding": "foreground_probs", "values": list(pred.cls.probs)},
        "r": pred.r,
    }


def encode_image_document(image_id: int, preds: Sequence[BernoulliComponent]) -> dict[str, Any]:
    return {
        "schema_version": PREDICTION_SCHEMA_VERSION,
        "image_id": int(image_id),
        "detections": [encode_detection(p) for p in preds],
    }


def write_predictions(path: Union[str, Path], predictions: Mapping[int, Sequence[BernoulliComponent]]) -> Path:
    """Write a dataset-level prediction file; read back with family="native"."""
    path = Path(path)
    doc = {
        "schema_version": PREDICTION_SCHEMA_VERSION,
        "predictions": [encode_image_document(i, predictions[i]) for i in sorted(predictions)],
    }
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=1)
    return path

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Union

from pmb_nll.errors import SchemaError
from pmb_nll.types import BoundingBox, GroundTruthObject, GroundTruthSet, LabelMap

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ImageInfo:
    image_id: int
    width: int
    height: int
    file_name: str = ""


@dataclass(frozen=True)
class Dataset:
    """COCO-style ground truth: images, per-image object sets and the label map."""

    images: tuple[ImageInfo, ...]
    ground_truth: dict[int, GroundTruthSet] = field(hash=False)
    label_map: LabelMap

    @property
    def image_ids(self) -> list[int]:
        return sorted(info.image_id for info in self.images)

    def objects_for(self, image_id: int, include_crowd: bool = False) -> GroundTruthSet:
        gts = self.ground_truth.get(image_id, GroundTruthSet(()))
        return gts if include_crowd else gts.without_crowd()


def load_json(path: Union[str, Path]) -> Any:
    """Parse a JSON file, reporting decode errors with line/column context."""
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc


def _require(record: dict, key: str, where: str, image_id: Any = None) -> Any:
    if not isinstance(record, dict) or key not in record:
        raise SchemaError(f"missing '{key}' in {where}", image_id=image_id, field=key)
    return record[key]


def int_field(value: Any, where: str, field: str, image_id: Any = None) -> int:
    """int(value), or a SchemaError naming the field when value is not an integer."""
    if isinstance(value, bool) or not isinstance(value, (int, float, str)):
        raise SchemaError(f"{where}: '{field}' must be an integer, got {value!r}", image_id=image_id, field=field)
    try:
        return int(value)
    except (TypeError, ValueError, OverflowError):
        raise SchemaError(
            f"{where}: '{field}' must be an integer, got {value!r}", image_id=image_id, field=field
        ) from None


def list_field(value: Any, where: str, field: str, image_id: Any = None) -> list:
    if not isinstance(value, list):
        raise SchemaError(
            f"{where}: '{field}' must be a list, got {type(value).__name__}", image_id=image_id, field=field
        )
    return value


def parse_ground_truth(payload: Any) -> Dataset:
    """Build a Dataset from a parsed COCO annotation document."""
    if not isinstance(payload, dict):
        raise SchemaError("ground truth must be a JSON object with images/annotations/categories")

    categories = list_field(_require(payload, "categories", "ground truth"), "ground truth", "categories")
    cat_ids: list[int] = []
    names: list[str] = []
    for k, cat in enumerate(categories):
        cat_ids.append(int_field(_require(cat, "id", f"categories[{k}]"), f"categories[{k}]", "id"))
        names.append(str(cat.get("name", cat_ids[-1])))
    try:
        label_map = LabelMap(tuple(cat_ids), tuple(names))
    except ValueError as exc:
        raise SchemaError(str(exc), field="categories") from exc

    images: list[ImageInfo] = []
    for k, img in enumerate(list_field(_require(payload, "images", "ground truth"), "ground truth", "images")):
        where = f"images[{k}]"
        images.append(
            ImageInfo(
                image_id=int_field(_require(img, "id", where), where, "id"),
                width=int_field(img.get("width", 0), where, "width"),
                height=int_field(img.get("height", 0), where, "height"),
                file_name=str(img.get("file_name", "")),
            )
        )
    known_images = {info.image_id for info in images}
    if len(known_images) != len(images):
        raise SchemaError("duplicate image ids", field="images")

    per_image: dict[int, list[GroundTruthObject]] = {image_id: [] for image_id in known_images}
    seen_ids: set[int] = set()
    for k, ann in enumerate(list_field(payload.get("annotations", []), "ground truth", "annotations")):
        where = f"annotations[{k}]"
        image_id = int_field(_require(ann, "image_id", where), where, "image_id")
        if image_id not in known_images:
            raise SchemaError(f"{where} references an undeclared image", image_id=image_id, field="image_id")
        ann_id = ann.get("id")
        if ann_id is not None:
            ann_id = int_field(ann_id, where, "id", image_id)
            if ann_id in seen_ids:
                raise SchemaError(f"duplicate annotation id {ann_id}", image_id=image_id, field="id")
            seen_ids.add(ann_id)
        category_id = int_field(_require(ann, "category_id", where, image_id), where, "category_id", image_id)
        try:
            class_id = label_map.index_of(category_id)
        except KeyError:
            raise SchemaError(
                f"{where} has unknown category {category_id}", image_id=image_id, field="category_id"
            ) from None
        bbox = _require(ann, "bbox", where, image_id)
        if not isinstance(bbox, (list, tuple)) or len(bbox) != 4:
            raise SchemaError(f"{where} bbox must be [x, y, w, h]", image_id=image_id, field="bbox")
        try:
            box = BoundingBox.from_xywh(*(float(v) for v in bbox))
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"{where}: {exc}", image_id=image_id, field="bbox") from exc
        if not box.is_ordered():
            raise SchemaError(f"{where} has negative width or height", image_id=image_id, field="bbox")
        per_image[image_id].append(
            GroundTruthObject(
                class_id=class_id,
                box=box,
                is_crowd=bool(ann.get("iscrowd", 0)),
                annotation_id=ann_id,
            )
        )

    ground_truth = {image_id: GroundTruthSet(tuple(objs)) for image_id, objs in per_image.items()}
    return Dataset(tuple(images), ground_truth, label_map)


def read_ground_truth(path: Union[str, Path]) -> Dataset:
    """
    Read a COCO annotation file (images, annotations, categories).

    bbox [x, y, w, h] becomes corners (x, y, x + w, y + h). Crowd annotations
    are kept and flagged; callers decide whether to drop them.

    Raises:
        SchemaError: Malformed JSON, missing fields, unknown categories or
            images, duplicate annotation ids.
    """
    dataset = parse_ground_truth(load_json(path))
    logger.info(
        "read %d images, %d annotations, %d categories from %s",
        len(dataset.images),
        sum(len(g) for g in dataset.ground_truth.values()),
        dataset.label_map.num_classes,
        path,
    )
    return dataset

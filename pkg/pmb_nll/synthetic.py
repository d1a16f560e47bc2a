"""
Seeded random PMB instances for property checks, tests and timing runs.

Boxes are drawn in absolute pixels. Scales are kept moderate so that
log-densities stay in the range real detectors produce.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from pmb_nll.types import (
    BernoulliComponent,
    BoundingBox,
    BoxDistribution,
    ClassDistribution,
    GroundTruthObject,
    GroundTruthSet,
    IntensityComponent,
    PmbDensity,
    PoissonIntensity,
)

FAMILIES = ("laplace", "gaussian", "cholesky")


def random_box(rng: np.random.Generator, image_size: float = 100.0, min_size: float = 4.0) -> BoundingBox:
    x1, y1 = rng.uniform(0.0, image_size * 0.8, size=2)
    w, h = rng.uniform(min_size, image_size * 0.3, size=2)
    return BoundingBox(float(x1), float(y1), float(x1 + w), float(y1 + h))


def random_class_distribution(rng: np.random.Generator, num_classes: int) -> ClassDistribution:
    probs = rng.dirichlet(np.ones(num_classes))
    probs = probs / np.sum(probs)
    # the last entry absorbs rounding so the sum is 1 to double precision
    probs[-1] = max(0.0, 1.0 - float(np.sum(probs[:-1])))
    return ClassDistribution(tuple(float(p) for p in probs))


def random_box_distribution(
    rng: np.random.Generator,
    mean: BoundingBox,
    family: str = "laplace",
    scale_range: tuple[float, float] = (0.5, 4.0),
) -> BoxDistribution:
    scales = rng.uniform(*scale_range, size=4)
    if family == "laplace":
        return BoxDistribution.laplace(mean, scales)
    if family == "gaussian":
        return BoxDistribution.gaussian(mean, scales)
    L = np.diag(scales)
    L[np.tril_indices(4, -1)] = rng.uniform(-0.3, 0.3, size=6) * scales.min()
    return BoxDistribution.cholesky(mean, L[np.tril_indices(4)])


def jitter_box(rng: np.random.Generator, box: BoundingBox, spread: float) -> BoundingBox:
    return BoundingBox.from_array(box.as_array() + rng.normal(0.0, spread, size=4))


def random_bernoulli(
    rng: np.random.Generator,
    num_classes: int,
    near: Optional[BoundingBox] = None,
    family: str = "laplace",
    r_range: tuple[float, float] = (0.01, 0.99),
    spread: float = 3.0,
    image_size: float = 100.0,
    scale_range: tuple[float, float] = (0.5, 4.0),
) -> BernoulliComponent:
    mean = jitter_box(rng, near, spread) if near is not None else random_box(rng, image_size)
    return BernoulliComponent(
        float(rng.uniform(*r_range)),
        random_class_distribution(rng, num_classes),
        random_box_distribution(rng, mean, family, scale_range),
    )


def random_ground_truth(
    rng: np.random.Generator,
    n: int,
    num_classes: int,
    image_size: float = 100.0,
) -> GroundTruthSet:
    return GroundTruthSet(
        tuple(
            GroundTruthObject(int(rng.integers(num_classes)), random_box(rng, image_size))
            for _ in range(n)
        )
    )


def random_intensity(
    rng: np.random.Generator,
    expected_cardinality: float,
    num_classes: int,
    anchors: Sequence[BoundingBox] = (),
    families: Sequence[str] = ("laplace",),
    max_components: int = 3,
) -> PoissonIntensity:
    if expected_cardinality <= 0.0:
        return PoissonIntensity.empty()
    k = int(rng.integers(1, max_components + 1))
    weights = rng.dirichlet(np.ones(k)) * expected_cardinality
    components = []
    for w in weights:
        near = anchors[int(rng.integers(len(anchors)))] if anchors else None
        pred = random_bernoulli(rng, num_classes, near, str(rng.choice(families)), spread=6.0)
        components.append(IntensityComponent(float(w), pred.cls, pred.box))
    return PoissonIntensity(tuple(components))


def random_instance(
    rng: np.random.Generator,
    max_bernoullis: int = 6,
    max_objects: int = 4,
    num_classes: int = 3,
    families: Sequence[str] = ("laplace", "gaussian"),
    min_objects: int = 0,
    max_expected_cardinality: float = 2.0,
    r_range: tuple[float, float] = (0.01, 0.99),
) -> tuple[PmbDensity, GroundTruthSet]:
    """
    A small PMB and ground-truth set with overlapping components.

    Most Bernoullis sit near some object so that several assignments carry
    likelihood; lambda-bar is uniform in [0, max_expected_cardinality].
    """
    n = int(rng.integers(min_objects, max_objects + 1))
    m = int(rng.integers(0, max_bernoullis + 1))
    gts = random_ground_truth(rng, n, num_classes)
    anchors = [o.box for o in gts]
    bernoullis = []
    for _ in range(m):
        near = anchors[int(rng.integers(n))] if n and rng.uniform() < 0.8 else None
        bernoullis.append(
            random_bernoulli(rng, num_classes, near, str(rng.choice(families)), r_range=r_range)
        )
    lam = float(rng.uniform(0.0, max_expected_cardinality))
    ppp = random_intensity(rng, lam, num_classes, anchors, families)
    return PmbDensity(tuple(bernoullis), ppp), gts


def separated_instance(
    rng: np.random.Generator,
    num_objects: int = 4,
    num_clutter: int = 2,
    num_classes: int = 3,
    spacing: float = 60.0,
    scale: float = 1.0,
) -> tuple[PmbDensity, GroundTruthSet]:
    """
    Objects on a grid `spacing` pixels apart, one tight Laplace Bernoulli per
    object (offset well under one scale unit) plus far-away clutter, so
    component means are many scale units apart.
    """
    objects = []
    bernoullis = []
    cols = max(1, int(np.ceil(np.sqrt(num_objects))))
    for k in range(num_objects):
        x, y = (k % cols) * spacing, (k // cols) * spacing
        box = BoundingBox(x, y, x + 20.0, y + 20.0)
        class_id = int(rng.integers(num_classes))
        objects.append(GroundTruthObject(class_id, box))
        probs = np.full(num_classes, 0.1 / max(num_classes - 1, 1))
        probs[class_id] = 0.9 if num_classes > 1 else 1.0
        probs[-1] = 1.0 - float(np.sum(probs[:-1]))
        mean = BoundingBox.from_array(box.as_array() + rng.uniform(-0.3, 0.3, size=4) * scale)
        bernoullis.append(
            BernoulliComponent(
                float(rng.uniform(0.6, 0.95)),
                ClassDistribution(tuple(float(p) for p in probs)),
                BoxDistribution.laplace(mean, (scale,) * 4),
            )
        )
    for k in range(num_clutter):
        x = -1000.0 - k * spacing
        bernoullis.append(
            BernoulliComponent(
                float(rng.uniform(0.1, 0.5)),
                random_class_distribution(rng, num_classes),
                BoxDistribution.laplace(BoundingBox(x, x, x + 20.0, x + 20.0), (scale,) * 4),
            )
        )
    return PmbDensity(tuple(bernoullis)), GroundTruthSet(tuple(objects))


def synthetic_image(
    rng: np.random.Generator,
    num_predictions: int = 100,
    max_objects: int = 20,
    num_classes: int = 80,
    image_size: float = 640.0,
) -> tuple[list[BernoulliComponent], GroundTruthSet]:
    """Detector-sized image: up to max_objects objects, num_predictions raw detections."""
    n = int(rng.integers(0, max_objects + 1))
    gts = random_ground_truth(rng, n, num_classes, image_size)
    preds = []
    for k in range(num_predictions):
        near = gts[k % n].box if n and k < 3 * n else None
        r_range = (0.3, 0.99) if near is not None else (0.001, 0.3)
        preds.append(
            random_bernoulli(
                rng, num_classes, near, "laplace", r_range=r_range, spread=4.0,
                image_size=image_size, scale_range=(1.0, 10.0),
            )
        )
    return preds, gts


def constant_scale_instance(
    rng: np.random.Generator,
    s: float,
    num_classes: int = 3,
    max_predictions: int = 6,
) -> tuple[list[BernoulliComponent], GroundTruthSet]:
    """N predictions with Laplace scale s on every coordinate, at least as many as objects."""
    N = int(rng.integers(1, max_predictions + 1))
    n = int(rng.integers(0, N + 1))
    gts = GroundTruthSet(
        tuple(GroundTruthObject(int(rng.integers(num_classes)), random_box(rng)) for _ in range(n))
    )
    preds = []
    for _ in range(N):
        anchor = gts[int(rng.integers(n))].box if n else random_box(rng)
        mean = BoundingBox.from_array(anchor.as_array() + rng.normal(0.0, 0.5, size=4))
        preds.append(
            BernoulliComponent(
                float(rng.uniform(0.05, 0.95)),
                random_class_distribution(rng, num_classes),
                BoxDistribution.laplace(mean, (s,) * 4),
            )
        )
    return preds, gts

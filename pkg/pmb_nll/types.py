"""
Domain types for PMB-NLL evaluation
===================================

A detector's output for one image is read as a Poisson multi-Bernoulli (PMB)
random finite set: every confident prediction is a Bernoulli component
(existence probability r, class distribution, box distribution) and the
low-confidence remainder forms a Poisson intensity over undetected objects.
Ground truth is the realized set of (class, box) objects.

All types are frozen dataclasses and validate their invariants on
construction. Nothing is renormalized or clamped silently.

Sections:
    1. Boxes and single-object distributions
    2. Bernoulli, Poisson and PMB densities
    3. Ground truth and label map
    4. Assignments and NLL reports
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Optional, Sequence

import numpy as np

from pmb_nll.config import CLASS_SUM_TOL, PPP_WEIGHT_SUM_TOL


# =============================================================================
# SECTION 1: Boxes and single-object distributions
# =============================================================================


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in absolute pixel coordinates (top-left, bottom-right)."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in (self.x1, self.y1, self.x2, self.y2)):
            raise ValueError(f"box coordinates must be finite, got {self.as_tuple()}")

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> BoundingBox:
        return cls(float(x), float(y), float(x) + float(w), float(y) + float(h))

    @classmethod
    def from_array(cls, values: Sequence[float]) -> BoundingBox:
        if len(values) != 4:
            raise ValueError(f"a box needs 4 coordinates, got {len(values)}")
        return cls(*(float(v) for v in values))

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    def as_array(self) -> np.ndarray:
        return np.array(self.as_tuple(), dtype=float)

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return max(self.width, 0.0) * max(self.height, 0.0)

    def is_ordered(self) -> bool:
        return self.x1 <= self.x2 and self.y1 <= self.y2


@dataclass(frozen=True)
class ClassDistribution:
    """Foreground class probabilities conditioned on existence."""

    probs: tuple[float, ...]

    def __post_init__(self) -> None:
        probs = tuple(float(p) for p in self.probs)
        object.__setattr__(self, "probs", probs)
        if not probs:
            raise ValueError("class distribution needs at least one class")
        if any(not (0.0 <= p <= 1.0) for p in probs):
            raise ValueError(f"class probabilities must lie in [0, 1], got {probs}")
        total = math.fsum(probs)
        if abs(total - 1.0) > CLASS_SUM_TOL:
            raise ValueError(f"class probabilities must sum to 1, got {total!r}")

    @property
    def num_classes(self) -> int:
        return len(self.probs)

    def log_prob(self, class_id: int) -> float:
        if not 0 <= class_id < len(self.probs):
            raise ValueError(f"class index {class_id} outside [0, {len(self.probs)})")
        p = self.probs[class_id]
        return math.log(p) if p > 0.0 else -math.inf

    def as_array(self) -> np.ndarray:
        return np.array(self.probs, dtype=float)

    def argmax(self) -> int:
        return int(np.argmax(self.as_array()))


class BoxFamily(str, Enum):
    LAPLACE = "laplace_independent"
    GAUSSIAN_DIAGONAL = "gaussian_diagonal"
    GAUSSIAN_CHOLESKY = "gaussian_full_cholesky"


# Row-major lower triangle of a 4x4 matrix: (0,0), (1,0), (1,1), (2,0), ...
CHOLESKY_ROWS, CHOLESKY_COLS = np.tril_indices(4)
CHOLESKY_DIAGONAL = tuple(int(k) for k in np.flatnonzero(CHOLESKY_ROWS == CHOLESKY_COLS))


@dataclass(frozen=True)
class BoxDistribution:
    """
    Spatial distribution over the four box coordinates.

    scale_params holds 4 Laplace scales s or Gaussian standard deviations sigma
    for the independent families, or the 10 row-major entries of the lower
    triangular L with Sigma = L L^T for the full Gaussian family.
    """

    family: BoxFamily
    mean: BoundingBox
    scale_params: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "family", BoxFamily(self.family))
        params = tuple(float(v) for v in self.scale_params)
        object.__setattr__(self, "scale_params", params)
        if not all(math.isfinite(v) for v in params):
            raise ValueError(f"scale parameters must be finite, got {params}")
        if self.family is BoxFamily.GAUSSIAN_CHOLESKY:
            if len(params) != 10:
                raise ValueError(f"cholesky factor needs 10 entries, got {len(params)}")
            diagonal = [params[k] for k in CHOLESKY_DIAGONAL]
        else:
            if len(params) != 4:
                raise ValueError(f"{self.family.value} needs 4 scales, got {len(params)}")
            diagonal = list(params)
        if any(d <= 0.0 for d in diagonal):
            raise ValueError(f"scale / diagonal entries must be strictly positive, got {diagonal}")

    @classmethod
    def laplace(cls, mean: BoundingBox, scales: Sequence[float]) -> BoxDistribution:
        return cls(BoxFamily.LAPLACE, mean, tuple(scales))

    @classmethod
    def gaussian(cls, mean: BoundingBox, sigmas: Sequence[float]) -> BoxDistribution:
        return cls(BoxFamily.GAUSSIAN_DIAGONAL, mean, tuple(sigmas))

    @classmethod
    def cholesky(cls, mean: BoundingBox, lower: Sequence[float]) -> BoxDistribution:
        return cls(BoxFamily.GAUSSIAN_CHOLESKY, mean, tuple(lower))

    def cholesky_matrix(self) -> np.ndarray:
        """Return L as a dense 4x4 lower-triangular matrix."""
        L = np.zeros((4, 4))
        if self.family is BoxFamily.GAUSSIAN_CHOLESKY:
            L[CHOLESKY_ROWS, CHOLESKY_COLS] = self.scale_params
        elif self.family is BoxFamily.GAUSSIAN_DIAGONAL:
            L[np.diag_indices(4)] = self.scale_params
        else:
            raise ValueError("a Laplace box distribution has no Cholesky factor")
        return L

    def diagonal_scales(self) -> tuple[float, ...]:
        if self.family is BoxFamily.GAUSSIAN_CHOLESKY:
            return tuple(self.scale_params[k] for k in CHOLESKY_DIAGONAL)
        return self.scale_params


# =============================================================================
# SECTION 2: Bernoulli, Poisson and PMB densities
# =============================================================================


@dataclass(frozen=True)
class BernoulliComponent:
    """One detection: exists with probability r, then draws (class, box)."""

    r: float
    cls: ClassDistribution
    box: BoxDistribution

    def __post_init__(self) -> None:
        r = float(self.r)
        object.__setattr__(self, "r", r)
        if not 0.0 <= r <= 1.0:
            raise ValueError(f"existence probability must lie in [0, 1], got {r!r}")

    def with_r(self, r: float) -> BernoulliComponent:
        return BernoulliComponent(r, self.cls, self.box)


@dataclass(frozen=True)
class IntensityComponent:
    weight: float
    cls: ClassDistribution
    box: BoxDistribution

    def __post_init__(self) -> None:
        weight = float(self.weight)
        object.__setattr__(self, "weight", weight)
        if not (weight > 0.0 and math.isfinite(weight)):
            raise ValueError(f"intensity weights must be positive, got {weight!r}")


@dataclass(frozen=True)
class PoissonIntensity:
    """Unnormalized mixture lambda(y) = sum_i w_i p_i(y) over undetected objects."""

    components: tuple[IntensityComponent, ...] = ()
    expected_cardinality: Optional[float] = None

    def __post_init__(self) -> None:
        components = tuple(self.components)
        object.__setattr__(self, "components", components)
        total = math.fsum(c.weight for c in components)
        if self.expected_cardinality is None:
            object.__setattr__(self, "expected_cardinality", total)
        elif abs(float(self.expected_cardinality) - total) > PPP_WEIGHT_SUM_TOL:
            raise ValueError(
                f"expected cardinality {self.expected_cardinality!r} differs from weight sum {total!r}"
            )

    @classmethod
    def empty(cls) -> PoissonIntensity:
        return cls(())

    def __len__(self) -> int:
        return len(self.components)

    @property
    def is_empty(self) -> bool:
        return not self.components


@dataclass(frozen=True)
class PmbDensity:
    """Union of m Bernoulli components and one Poisson point process."""

    bernoullis: tuple[BernoulliComponent, ...]
    ppp: PoissonIntensity = field(default_factory=PoissonIntensity.empty)

    def __post_init__(self) -> None:
        object.__setattr__(self, "bernoullis", tuple(self.bernoullis))

    @classmethod
    def multi_bernoulli(cls, bernoullis: Sequence[BernoulliComponent]) -> PmbDensity:
        return cls(tuple(bernoullis), PoissonIntensity.empty())

    @property
    def num_bernoullis(self) -> int:
        return len(self.bernoullis)

    def existence_probabilities(self) -> np.ndarray:
        return np.array([b.r for b in self.bernoullis], dtype=float)

    def with_clamped_existence(self, max_r: float) -> PmbDensity:
        """Copy with every r replaced by min(r, max_r)."""
        return PmbDensity(
            tuple(b if b.r <= max_r else b.with_r(max_r) for b in self.bernoullis),
            self.ppp,
        )


# =============================================================================
# SECTION 3: Ground truth and label map
# =============================================================================


@dataclass(frozen=True)
class GroundTruthObject:
    class_id: int
    box: BoundingBox
    is_crowd: bool = False
    annotation_id: Optional[int] = None

    def __post_init__(self) -> None:
        if int(self.class_id) != self.class_id or self.class_id < 0:
            raise ValueError(f"class_id must be a nonnegative integer, got {self.class_id!r}")
        object.__setattr__(self, "class_id", int(self.class_id))


@dataclass(frozen=True)
class GroundTruthSet:
    """The realized object set for one image."""

    objects: tuple[GroundTruthObject, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "objects", tuple(self.objects))

    def __len__(self) -> int:
        return len(self.objects)

    def __iter__(self) -> Iterator[GroundTruthObject]:
        return iter(self.objects)

    def __getitem__(self, index: int) -> GroundTruthObject:
        return self.objects[index]

    def without_crowd(self) -> GroundTruthSet:
        return GroundTruthSet(tuple(o for o in self.objects if not o.is_crowd))

    def boxes(self) -> np.ndarray:
        if not self.objects:
            return np.zeros((0, 4))
        return np.array([o.box.as_tuple() for o in self.objects], dtype=float)

    def class_ids(self) -> np.ndarray:
        return np.array([o.class_id for o in self.objects], dtype=int)

    def check_vocabulary(self, num_classes: int) -> None:
        for o in self.objects:
            if o.class_id >= num_classes:
                raise ValueError(f"class index {o.class_id} outside [0, {num_classes})")


@dataclass(frozen=True)
class LabelMap:
    """COCO category ids mapped to contiguous class indices [0, C)."""

    category_ids: tuple[int, ...]
    names: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.category_ids) != len(self.names):
            raise ValueError("label map needs one name per category id")
        if len(set(self.category_ids)) != len(self.category_ids):
            raise ValueError("duplicate category ids in label map")

    @property
    def num_classes(self) -> int:
        return len(self.category_ids)

    def index_of(self, category_id: int) -> int:
        try:
            return self.category_ids.index(category_id)
        except ValueError:
            raise KeyError(category_id) from None

    def category_of(self, index: int) -> int:
        return self.category_ids[index]


# =============================================================================
# SECTION 4: Assignments and NLL reports
# =============================================================================


PPP = -1  # gt_to_target entry for objects explained by the Poisson intensity


@dataclass(frozen=True)
class Assignment:
    """
    Association of every ground-truth object to a distinct Bernoulli or the PPP.

    total_cost is the sum of the selected cost-matrix entries, i.e. the
    Frobenius inner product trace(A^T C) of the 0/1 assignment matrix A.
    """

    gt_to_target: tuple[int, ...]
    total_cost: float

    def __post_init__(self) -> None:
        targets = tuple(int(t) for t in self.gt_to_target)
        object.__setattr__(self, "gt_to_target", targets)
        matched = [t for t in targets if t != PPP]
        if any(t < PPP for t in targets):
            raise ValueError(f"invalid target index in {targets}")
        if len(set(matched)) != len(matched):
            raise ValueError(f"a Bernoulli is matched to more than one object: {targets}")

    @property
    def num_objects(self) -> int:
        return len(self.gt_to_target)

    def matched_pairs(self) -> list[tuple[int, int]]:
        """(bernoulli index, gt index) for every object matched to a Bernoulli."""
        return [(i, j) for j, i in enumerate(self.gt_to_target) if i != PPP]

    def ppp_objects(self) -> list[int]:
        return [j for j, i in enumerate(self.gt_to_target) if i == PPP]

    def unmatched_bernoullis(self, num_bernoullis: int) -> list[int]:
        used = set(self.gt_to_target)
        return [i for i in range(num_bernoullis) if i not in used]


@dataclass(frozen=True)
class TermContribution:
    """One prediction's (or one PPP-matched object's) share of a decomposition term."""

    term: str
    value: float
    gt_area: Optional[float] = None


@dataclass(frozen=True)
class NllDecomposition:
    """Single-best-assignment NLL split into its error sources (nats)."""

    regression: float = 0.0
    classification: float = 0.0
    false_detection: float = 0.0
    missed_match: float = 0.0
    ppp_rate: float = 0.0
    num_matched: int = 0
    num_unmatched: int = 0
    num_ppp: int = 0
    contributions: tuple[TermContribution, ...] = ()

    @property
    def total(self) -> float:
        return (
            self.regression
            + self.classification
            + self.false_detection
            + self.missed_match
            + self.ppp_rate
        )


@dataclass(frozen=True)
class NllReport:
    """
    Output of the Q-best PMB-NLL approximation for one image.

    best_assignment is None only when no feasible assignment exists; nll is
    then +inf and the decomposition charges the unexplainable objects to
    missed_match.
    """

    nll: float
    per_assignment_loglik: tuple[float, ...]
    best_assignment: Optional[Assignment]
    decomposition: NllDecomposition
    q_used: int

    @property
    def is_infinite(self) -> bool:
        return math.isinf(self.nll)

"""
Log-domain Densities
====================

Everything here returns natural-log values. Linear-domain likelihoods only
appear inside log-sum-exp reductions: per-image regression terms reach
~100 nats, far below double-precision underflow. Negative infinity is a
regular value (zero likelihood) and is propagated, never replaced.

Sections:
    1. Single-object densities
    2. Bernoulli and Poisson terms
    3. Pairwise tables (cost-matrix inputs)
    4. Exact PMB likelihood by enumeration
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from pmb_nll.config import MAX_BRUTE_FORCE_BERNOULLIS, MAX_BRUTE_FORCE_OBJECTS
from pmb_nll.errors import BruteForceLimitError
from pmb_nll.types import (
    BernoulliComponent,
    BoundingBox,
    BoxDistribution,
    BoxFamily,
    GroundTruthObject,
    GroundTruthSet,
    IntensityComponent,
    PmbDensity,
    PoissonIntensity,
)

Component = Union[BernoulliComponent, IntensityComponent]

_LOG_2PI = math.log(2.0 * math.pi)
_LOG_2 = math.log(2.0)


def log_sum_exp(values: Sequence[float]) -> float:
    """Stable log(sum(exp(values))); -inf for an empty or all -inf input."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0 or not np.any(arr > -np.inf):
        return -math.inf
    return float(logsumexp(arr))


# =============================================================================
# SECTION 1: Single-object densities
# =============================================================================


def log_box_density_many(dist: BoxDistribution, boxes: np.ndarray) -> np.ndarray:
    """
    Evaluate a box log-density at many boxes at once.

    Args:
        dist: Spatial distribution of one prediction.
        boxes: Array of shape (n, 4) with xyxy coordinates.

    Returns:
        Array of shape (n,) of log-densities in nats.
    """
    boxes = np.asarray(boxes, dtype=float).reshape(-1, 4)
    delta = boxes - dist.mean.as_array()[None, :]

    if dist.family is BoxFamily.LAPLACE:
        s = np.asarray(dist.scale_params)
        return -(np.abs(delta) / s).sum(axis=1) - np.log(2.0 * s).sum()

    if dist.family is BoxFamily.GAUSSIAN_DIAGONAL:
        sigma = np.asarray(dist.scale_params)
        z = delta / sigma
        return -0.5 * (z * z).sum(axis=1) - np.log(sigma).sum() - 2.0 * _LOG_2PI

    L = dist.cholesky_matrix()
    z = solve_triangular(L, delta.T, lower=True)  # (4, n)
    # log|Sigma| = 2 * sum(log L_kk)
    return -0.5 * (z * z).sum(axis=0) - np.log(np.diag(L)).sum() - 2.0 * _LOG_2PI


def log_box_density(dist: BoxDistribution, b: BoundingBox) -> float:
    """
    Log-density of a box under a prediction's spatial distribution.

    Independent families sum four univariate terms; the full Gaussian family
    uses the 4-D normal with Sigma = L L^T.

    Example:
        >>> d = BoxDistribution.laplace(BoundingBox(0, 0, 10, 10), (1, 1, 1, 1))
        >>> round(log_box_density(d, BoundingBox(1, 0, 10, 10)), 4)
        -3.7726
    """
    return float(log_box_density_many(dist, b.as_array()[None, :])[0])


def log_single_object_density(comp: Component, y: GroundTruthObject) -> float:
    """log p(y) = log p_cls(c) + log p_reg(b); -inf when p_cls(c) = 0."""
    log_cls = comp.cls.log_prob(y.class_id)
    if log_cls == -math.inf:
        return -math.inf
    return log_cls + log_box_density(comp.box, y.box)


# =============================================================================
# SECTION 2: Bernoulli and Poisson terms
# =============================================================================


def _log(x: float) -> float:
    return math.log(x) if x > 0.0 else -math.inf


def log_bernoulli_set(comp: BernoulliComponent, subset: Sequence[GroundTruthObject]) -> float:
    """Bernoulli RFS log-density: empty, singleton, or impossible (|set| > 1)."""
    if len(subset) == 0:
        return _log(1.0 - comp.r)
    if len(subset) == 1:
        log_r = _log(comp.r)
        if log_r == -math.inf:
            return -math.inf
        return log_r + log_single_object_density(comp, subset[0])
    return -math.inf


def log_ppp_intensity(ppp: PoissonIntensity, y: GroundTruthObject) -> float:
    """log lambda(y) = log sum_i w_i p_i(y), by log-sum-exp over the mixture."""
    if ppp.is_empty:
        return -math.inf
    terms = [math.log(c.weight) + log_single_object_density(c, y) for c in ppp.components]
    return log_sum_exp(terms)


# =============================================================================
# SECTION 3: Pairwise tables (cost-matrix inputs)
# =============================================================================


def _log_class_table(components: Sequence[Component], class_ids: np.ndarray) -> np.ndarray:
    if not components:
        return np.zeros((0, len(class_ids)))
    probs = np.array([c.cls.probs for c in components], dtype=float)
    if len(class_ids) and class_ids.max() >= probs.shape[1]:
        raise ValueError(f"class index {int(class_ids.max())} outside [0, {probs.shape[1]})")
    with np.errstate(divide="ignore"):
        return np.log(probs[:, class_ids])


def _log_box_table(components: Sequence[Component], boxes: np.ndarray) -> np.ndarray:
    if not components:
        return np.zeros((0, len(boxes)))
    return np.stack([log_box_density_many(c.box, boxes) for c in components])


def log_ppp_intensity_many(ppp: PoissonIntensity, gts: GroundTruthSet) -> np.ndarray:
    """Vectorized log lambda(y_j) for every object; all -inf for an empty intensity."""
    n = len(gts)
    if ppp.is_empty or n == 0:
        return np.full(n, -np.inf)
    log_w = np.log([c.weight for c in ppp.components])[:, None]
    terms = log_w + _log_class_table(ppp.components, gts.class_ids()) + _log_box_table(
        ppp.components, gts.boxes()
    )
    out = np.full(n, -np.inf)
    finite = np.any(terms > -np.inf, axis=0)
    if finite.any():
        out[finite] = logsumexp(terms[:, finite], axis=0)
    return out


@dataclass(frozen=True)
class PairwiseLogLikelihoods:
    """
    Every per-pair and per-component log term needed to score a PMB.

    Attributes:
        log_cls: (m, n) log p_i,cls(c_j).
        log_reg: (m, n) log p_i,reg(b_j).
        log_r: (m,) log r_i.
        log_1mr: (m,) log(1 - r_i).
        log_intensity: (n,) log lambda(y_j).
        expected_cardinality: lambda-bar.
    """

    log_cls: np.ndarray
    log_reg: np.ndarray
    log_r: np.ndarray
    log_1mr: np.ndarray
    log_intensity: np.ndarray
    expected_cardinality: float

    @property
    def log_p(self) -> np.ndarray:
        return self.log_cls + self.log_reg

    @property
    def log_detect(self) -> np.ndarray:
        """(m, n) log(r_i p_i(y_j)), the matched Bernoulli term."""
        return self.log_r[:, None] + self.log_cls + self.log_reg


def pairwise_log_likelihoods(pmb: PmbDensity, gts: GroundTruthSet) -> PairwiseLogLikelihoods:
    class_ids = gts.class_ids()
    r = pmb.existence_probabilities()
    with np.errstate(divide="ignore"):
        log_r = np.log(r)
        log_1mr = np.log1p(-r)
    return PairwiseLogLikelihoods(
        log_cls=_log_class_table(pmb.bernoullis, class_ids),
        log_reg=_log_box_table(pmb.bernoullis, gts.boxes()),
        log_r=log_r,
        log_1mr=log_1mr,
        log_intensity=log_ppp_intensity_many(pmb.ppp, gts),
        expected_cardinality=float(pmb.ppp.expected_cardinality),
    )


# =============================================================================
# SECTION 4: Exact PMB likelihood by enumeration
# =============================================================================


def brute_force_log_pmb(pmb: PmbDensity, gts: GroundTruthSet) -> float:
    """
    Exact log f_PMB(Y) by summing over every assignment.

    Each ground-truth object goes to a distinct Bernoulli or to the PPP;
    unmatched Bernoullis contribute log(1 - r_i); exp(-lambda-bar) enters once.
    Recursive descent over objects with a used-Bernoulli mask, in a fixed
    order. Intended as a test oracle only.

    Raises:
        BruteForceLimitError: More than 8 Bernoullis or 6 objects.
    """
    m, n = pmb.num_bernoullis, len(gts)
    if m > MAX_BRUTE_FORCE_BERNOULLIS or n > MAX_BRUTE_FORCE_OBJECTS:
        raise BruteForceLimitError(
            f"brute force is limited to m <= {MAX_BRUTE_FORCE_BERNOULLIS} and "
            f"n <= {MAX_BRUTE_FORCE_OBJECTS}, got m={m}, n={n}"
        )

    matched = [[log_bernoulli_set(b, [y]) for y in gts] for b in pmb.bernoullis]
    empty = [log_bernoulli_set(b, []) for b in pmb.bernoullis]
    intensity = [log_ppp_intensity(pmb.ppp, y) for y in gts]

    terms: list[float] = []

    def descend(j: int, used: int, acc: float) -> None:
        if j == n:
            rest = sum(empty[i] for i in range(m) if not used & (1 << i))
            terms.append(acc + rest)
            return
        for i in range(m):
            if not used & (1 << i):
                descend(j + 1, used | (1 << i), acc + matched[i][j])
        descend(j + 1, used, acc + intensity[j])

    descend(0, 0, 0.0)
    return log_sum_exp(terms) - float(pmb.ppp.expected_cardinality)

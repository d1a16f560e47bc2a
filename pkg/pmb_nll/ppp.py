from __future__ import annotations

import logging
from typing import Sequence

from pmb_nll.config import DEFAULT_R_THRESHOLD
from pmb_nll.types import BernoulliComponent, IntensityComponent, PmbDensity, PoissonIntensity

logger = logging.getLogger(__name__)


def build_pmb(
    preds: Sequence[BernoulliComponent],
    r_threshold: float = DEFAULT_R_THRESHOLD,
) -> PmbDensity:
    """
    Split raw detections into Bernoulli components and a PPP intensity.

    Predictions with r < r_threshold (strictly) become mixture terms
    lambda(y) = sum_i r_i p_i(y) of the Poisson intensity; the rest stay
    Bernoulli components. Order is preserved within each group, and the
    total existence mass is conserved: sum(r) = sum(r_bernoulli) + lambda-bar.

    Zero-probability predictions (r = 0) contribute nothing to lambda and are
    dropped from the intensity; a zero-weight mixture term is not a valid
    component.

    Args:
        preds: Detections for one image.
        r_threshold: Existence probability below which a detection moves to the PPP.

    Returns:
        PmbDensity; an empty intensity when nothing falls below the threshold.

    Example:
        >>> pmb = build_pmb(preds_with_r_096_040_005, 0.1)
        >>> pmb.num_bernoullis, pmb.ppp.expected_cardinality
        (2, 0.05)
    """
    if not 0.0 <= r_threshold <= 1.0:
        raise ValueError(f"r_threshold must lie in [0, 1], got {r_threshold!r}")

    bernoullis: list[BernoulliComponent] = []
    mixture: list[IntensityComponent] = []
    for pred in preds:
        if pred.r >= r_threshold:
            bernoullis.append(pred)
        elif pred.r > 0.0:
            mixture.append(IntensityComponent(pred.r, pred.cls, pred.box))

    logger.debug(
        "split %d predictions into %d Bernoullis and %d intensity terms at r < %g",
        len(preds),
        len(bernoullis),
        len(mixture),
        r_threshold,
    )
    return PmbDensity(tuple(bernoullis), PoissonIntensity(tuple(mixture)))

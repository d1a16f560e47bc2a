"""
Self-Test Property Suites
=========================

Seeded property checks of the scoring core against exhaustive oracles:

- oracle_equivalence: pmb_nll over every feasible assignment equals the
  brute-force PMB log-density.
- murty_prefix: Murty's ranked assignments equal full enumeration.
- q_monotonicity: NLL is non-increasing in Q, and Q = 25 converges on
  well-separated scenes.
- decomposition_identity: the five terms add up to the Q = 1 NLL, and an
  unmatched r = 0.999 Bernoulli costs more than 6.9 nats.
- gradient_check: analytic training-loss gradients match central differences.
- detr_equivalence: DETR matching with log classification, lambda_iou = 0 and
  lambda_l1 = 1/s picks the same permutation as the constant-scale MB cost.

Each property draws from its own generator seeded with (seed, property index).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from pmb_nll.assignment import CostMatrix, build_cost_matrix, enumerate_all, murty_k_best
from pmb_nll.config import DEFAULT_CONSTANT_SCALE, DEFAULT_Q, SELFTEST_ITERATIONS, SELFTEST_SEED
from pmb_nll.density import brute_force_log_pmb
from pmb_nll.detr import (
    detr_matching_cost,
    mb_matching_cost,
    mb_matching_cost_constant_scale,
    optimal_permutation,
    permutations_agree,
)
from pmb_nll.errors import PropertyFailure
from pmb_nll.scoring import mb_loss_for_assignment, pmb_nll, training_loss_gradients
from pmb_nll.synthetic import (
    constant_scale_instance,
    random_bernoulli,
    random_ground_truth,
    random_instance,
    separated_instance,
)
from pmb_nll.types import (
    BernoulliComponent,
    BoundingBox,
    BoxDistribution,
    ClassDistribution,
    GroundTruthObject,
    GroundTruthSet,
    PmbDensity,
)

logger = logging.getLogger(__name__)

ORACLE_TOL = 1e-9
CONVERGENCE_TOL = 1e-6
GRADIENT_STEP = 1e-5
GRADIENT_RTOL = 1e-5
KINK_MARGIN = 1e-3


@dataclass(frozen=True)
class PropertyResult:
    name: str
    passed: bool
    checked: int
    detail: str = ""


def _close(a: float, b: float, tol: float = ORACLE_TOL) -> bool:
    if math.isinf(a) or math.isinf(b):
        return a == b
    return abs(a - b) <= tol


def _corrupt(costs: CostMatrix) -> CostMatrix:
    values = np.array(costs.values, copy=True)
    finite = np.isfinite(values)
    values[finite] += 1.0
    return CostMatrix(values, costs.num_bernoullis)


# =============================================================================
# Properties (each raises PropertyFailure on the first counterexample)
# =============================================================================


def check_oracle_equivalence(rng: np.random.Generator, iterations: int, corrupt: bool = False) -> int:
    for it in range(iterations):
        pmb, gts = random_instance(rng)
        full = enumerate_all(build_cost_matrix(pmb, gts))
        exact = -brute_force_log_pmb(pmb, gts)
        approx = pmb_nll(pmb, gts, q=max(1, len(full))).nll
        if not _close(approx, exact):
            raise PropertyFailure(
                "oracle_equivalence",
                f"instance {it}: pmb_nll={approx!r}, brute force={exact!r} (m={pmb.num_bernoullis}, n={len(gts)})",
            )
    return iterations


def check_murty_prefix(rng: np.random.Generator, iterations: int, corrupt: bool = False) -> int:
    for it in range(iterations):
        pmb, gts = random_instance(rng, min_objects=1 if corrupt else 0)
        costs = build_cost_matrix(pmb, gts)
        full = enumerate_all(costs)
        ranked = murty_k_best(_corrupt(costs) if corrupt else costs, max(1, len(full)))
        if len(ranked) != len(full):
            raise PropertyFailure("murty_prefix", f"instance {it}: {len(ranked)} ranked vs {len(full)} enumerated")
        if sorted(a.gt_to_target for a in ranked) != sorted(a.gt_to_target for a in full):
            raise PropertyFailure("murty_prefix", f"instance {it}: ranked assignments differ from enumeration")
        for k, (a, b) in enumerate(zip(ranked, full)):
            if not _close(a.total_cost, b.total_cost):
                raise PropertyFailure(
                    "murty_prefix", f"instance {it}, rank {k}: cost {a.total_cost!r} vs {b.total_cost!r}"
                )
    return iterations


def check_q_monotonicity(rng: np.random.Generator, iterations: int, corrupt: bool = False) -> int:
    for it in range(iterations):
        pmb, gts = random_instance(rng)
        full = len(enumerate_all(build_cost_matrix(pmb, gts)))
        qs = sorted({q for q in (1, 2, 3, 5, 8, 13, 21, DEFAULT_Q, full) if 1 <= q <= max(full, 1)})
        values = [pmb_nll(pmb, gts, q=q).nll for q in qs]
        for (q0, v0), (q1, v1) in zip(zip(qs, values), zip(qs[1:], values[1:])):
            if v1 > v0 + 1e-12 * max(1.0, abs(v0)):
                raise PropertyFailure("q_monotonicity", f"instance {it}: NLL(q={q1})={v1!r} > NLL(q={q0})={v0!r}")

        pmb, gts = separated_instance(rng)
        exact = -brute_force_log_pmb(pmb, gts)
        approx = pmb_nll(pmb, gts, q=DEFAULT_Q).nll
        if abs(approx - exact) >= CONVERGENCE_TOL:
            raise PropertyFailure(
                "q_monotonicity", f"separated instance {it}: |NLL(25) - exact| = {abs(approx - exact)!r}"
            )
    return iterations


def _far_confident_bernoulli(num_classes: int) -> BernoulliComponent:
    far = BoundingBox(-1.0e4, -1.0e4, -1.0e4 + 10.0, -1.0e4 + 10.0)
    probs = tuple([1.0 / num_classes] * num_classes)
    return BernoulliComponent(0.999, ClassDistribution(probs), BoxDistribution.laplace(far, (0.5,) * 4))


def check_decomposition_identity(rng: np.random.Generator, iterations: int, corrupt: bool = False) -> int:
    for it in range(iterations):
        pmb, gts = random_instance(rng)
        report = pmb_nll(pmb, gts, q=1)
        if report.is_infinite:
            continue
        total = report.decomposition.total
        if not _close(total, report.nll):
            raise PropertyFailure("decomposition_identity", f"instance {it}: terms sum to {total!r}, NLL {report.nll!r}")

        num_classes = 3
        with_fp = PmbDensity(pmb.bernoullis + (_far_confident_bernoulli(num_classes),), pmb.ppp)
        fp = pmb_nll(with_fp, gts, q=1).decomposition.false_detection
        if not fp > 6.9:
            raise PropertyFailure("decomposition_identity", f"instance {it}: false_detection {fp!r} <= 6.9")
    return iterations


def _laplace_training_instance(rng: np.random.Generator) -> tuple[list[BernoulliComponent], GroundTruthSet]:
    while True:
        num_classes = 3
        n = int(rng.integers(0, 4))
        m = int(rng.integers(max(n, 1), 6))
        gts = random_ground_truth(rng, n, num_classes)
        preds = []
        for k in range(m):
            near = gts[k].box if k < n else None
            preds.append(random_bernoulli(rng, num_classes, near, "laplace", r_range=(0.05, 0.95)))
        boxes = np.array([p.box.mean.as_tuple() for p in preds])
        if n and np.min(np.abs(boxes[:, None, :] - gts.boxes()[None, :, :])) < KINK_MARGIN:
            continue
        return preds, gts


def _replace(preds: list[BernoulliComponent], i: int, pred: BernoulliComponent) -> list[BernoulliComponent]:
    out = list(preds)
    out[i] = pred
    return out


def _shift_box(pred: BernoulliComponent, kind: str, k: int, h: float) -> BernoulliComponent:
    mean = pred.box.mean.as_array()
    scales = np.array(pred.box.scale_params)
    if kind == "mean":
        mean[k] += h
    else:
        scales[k] += h
    return BernoulliComponent(pred.r, pred.cls, BoxDistribution.laplace(BoundingBox.from_array(mean), scales))


def _gradient_ok(analytic: float, numeric: float) -> bool:
    return abs(analytic - numeric) <= GRADIENT_RTOL * max(abs(analytic), abs(numeric)) + 1e-7


def check_gradients(rng: np.random.Generator, iterations: int, corrupt: bool = False) -> int:
    h = GRADIENT_STEP
    for it in range(iterations):
        preds, gts = _laplace_training_instance(rng)
        grads = training_loss_gradients(preds, gts)

        def loss(p: list[BernoulliComponent]) -> float:
            return mb_loss_for_assignment(p, gts, grads.assignment)

        for i, pred in enumerate(preds):
            numeric = (loss(_replace(preds, i, pred.with_r(pred.r + h))) - loss(_replace(preds, i, pred.with_r(pred.r - h)))) / (2 * h)
            if not _gradient_ok(grads.d_r[i], numeric):
                raise PropertyFailure("gradient_check", f"instance {it}, prediction {i}: d_r {grads.d_r[i]!r} vs {numeric!r}")
            for kind, table in (("mean", grads.d_mean), ("scale", grads.d_scale)):
                for k in range(4):
                    up = loss(_replace(preds, i, _shift_box(pred, kind, k, h)))
                    down = loss(_replace(preds, i, _shift_box(pred, kind, k, -h)))
                    numeric = (up - down) / (2 * h)
                    if not _gradient_ok(table[i, k], numeric):
                        raise PropertyFailure(
                            "gradient_check",
                            f"instance {it}, prediction {i}: d_{kind}[{k}] {table[i, k]!r} vs {numeric!r}",
                        )
    return iterations


def check_detr_equivalence(rng: np.random.Generator, iterations: int, corrupt: bool = False) -> int:
    s = DEFAULT_CONSTANT_SCALE
    offset = 4.0 * math.log(2.0 * s)

    def detr_log(gt: Optional[GroundTruthObject], pred: BernoulliComponent) -> float:
        return detr_matching_cost(gt, pred, lambda_iou=0.0, lambda_l1=1.0 / s, log_class=True)

    for it in range(iterations):
        preds, gts = constant_scale_instance(rng, s)
        for gt in [None, *gts]:
            for pred in preds:
                a = mb_matching_cost_constant_scale(gt, pred, s)
                b = detr_log(gt, pred)
                full = mb_matching_cost(gt, pred)
                expected_full = a if gt is None else a + offset
                if not (math.isclose(a, b, rel_tol=1e-12, abs_tol=1e-12)
                        and math.isclose(full, expected_full, rel_tol=1e-12, abs_tol=1e-9)):
                    raise PropertyFailure("detr_equivalence", f"instance {it}: costs {a!r}, {b!r}, {full!r}")
        mb = optimal_permutation(mb_matching_cost, preds, gts)
        detr = optimal_permutation(detr_log, preds, gts)
        if not permutations_agree(mb_matching_cost, detr_log, preds, gts, mb, detr):
            n = len(gts)
            raise PropertyFailure(
                "detr_equivalence", f"instance {it}: MB matching {mb[:n]} vs DETR matching {detr[:n]}"
            )
    return iterations


PROPERTIES: dict[str, Callable[[np.random.Generator, int, bool], int]] = {
    "oracle_equivalence": check_oracle_equivalence,
    "murty_prefix": check_murty_prefix,
    "q_monotonicity": check_q_monotonicity,
    "decomposition_identity": check_decomposition_identity,
    "gradient_check": check_gradients,
    "detr_equivalence": check_detr_equivalence,
}


def run_selftest(
    seed: int = SELFTEST_SEED,
    iterations: int = SELFTEST_ITERATIONS,
    corrupt: bool = False,
    properties: Optional[Sequence[str]] = None,
) -> list[PropertyResult]:
    """
    Run the property suites and collect one result per property.

    Args:
        seed: Base seed; property k draws from default_rng([seed, k]).
        iterations: Random instances per property; 0 passes trivially.
        corrupt: Shift every finite cost before Murty ranks it, so that
            murty_prefix must fail.
        properties: Subset of PROPERTIES to run (default: all).
    """
    if iterations < 0:
        raise ValueError(f"iterations must be nonnegative, got {iterations}")
    names = list(PROPERTIES) if properties is None else list(properties)
    unknown = [n for n in names if n not in PROPERTIES]
    if unknown:
        raise ValueError(f"unknown properties {unknown}, expected a subset of {list(PROPERTIES)}")
    if iterations == 0:
        logger.warning("selftest called with 0 iterations: nothing checked")

    results = []
    for name in names:
        index = list(PROPERTIES).index(name)
        rng = np.random.default_rng([seed, index])
        try:
            checked = PROPERTIES[name](rng, iterations, corrupt)
        except PropertyFailure as exc:
            logger.error("%s", exc)
            results.append(PropertyResult(name, False, 0, exc.detail))
            continue
        logger.info("%s: %d instances passed", name, checked)
        results.append(PropertyResult(name, True, checked))
    return results

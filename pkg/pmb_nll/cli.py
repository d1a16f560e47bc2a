from __future__ import annotations

import argparse
import logging
from typing import Optional, Sequence

from pmb_nll.config import (
    DEFAULT_CONSTANT_SCALE,
    DEFAULT_FAMILY,
    DEFAULT_LAMBDA_IOU,
    DEFAULT_LAMBDA_L1,
    DEFAULT_NMS_IOU,
    DEFAULT_Q,
    DEFAULT_R_THRESHOLD,
    DEFAULT_TOP_K,
    SELFTEST_ITERATIONS,
    SELFTEST_SEED,
)
from pmb_nll.data import read_ground_truth, read_predictions
from pmb_nll.data.predictions import FAMILIES
from pmb_nll.errors import (
    EXIT_IO_ERROR,
    EXIT_OK,
    EXIT_PROPERTY_FAILURE,
    EXIT_SCHEMA_ERROR,
    EXIT_USAGE_ERROR,
    SchemaError,
)
from pmb_nll.reporting import (
    REPORT_FORMATS,
    aggregate,
    print_summary,
    write_comparison,
    write_histograms,
    write_report,
)
from pmb_nll.workflows.compare import ComparisonSettings, agreement_rate, compare_dataset
from pmb_nll.workflows.evaluate import EvaluationSettings, evaluate_dataset
from pmb_nll.workflows.selftest import PROPERTIES, run_selftest

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def _add_inputs(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("gt_path", help="COCO-style ground-truth JSON")
    parser.add_argument("preds_path", help="Prediction JSON file or directory of per-image files")
    parser.add_argument("--out", dest="out_path", required=True, help="Report output path")
    parser.add_argument("--family", choices=FAMILIES, default=DEFAULT_FAMILY, help="Box distribution family")
    parser.add_argument("--include-crowd", action="store_true", help="Keep iscrowd annotations")
    parser.add_argument("--format", dest="fmt", choices=REPORT_FORMATS, default="csv", help="Report format")


def _add_protocol(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--r-threshold", type=float, default=DEFAULT_R_THRESHOLD, help="Bernoulli/PPP split on r")
    parser.add_argument("--no-nms", dest="nms", action="store_false", help="Skip NMS (set-based detectors)")
    parser.add_argument("--nms-iou", type=float, default=DEFAULT_NMS_IOU, help="NMS IoU threshold")
    parser.add_argument("--class-agnostic-nms", action="store_true", help="Suppress across classes")
    parser.add_argument("--top-k", type=int, default=DEFAULT_TOP_K, help="Detections kept per image")
    parser.add_argument("--clamp-r", action="store_true", help="Clamp r to 1 - 1e-12")
    parser.add_argument("--jobs", type=int, default=None, help="Worker processes (default: PMB_NLL_JOBS or CPU count)")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--verbose", action="store_true", help="Debug logging")

    parser = argparse.ArgumentParser(prog="pmb-nll", description="PMB-NLL evaluation of probabilistic object detectors")
    sub = parser.add_subparsers(dest="command", required=True)

    evaluate = sub.add_parser("evaluate", parents=[common], help="Per-image PMB-NLL with decomposition and aggregate")
    _add_inputs(evaluate)
    _add_protocol(evaluate)
    evaluate.add_argument("--q", type=int, default=DEFAULT_Q, help="Number of assignments kept")
    evaluate.add_argument("--exclude-infinite", action="store_true", help="Drop infinite-NLL images from means")
    evaluate.add_argument("--histograms", dest="histogram_path", default=None, help="Also write histogram CSV")

    decompose = sub.add_parser("decompose", parents=[common], help="Q=1 decomposition histograms by COCO size class")
    _add_inputs(decompose)
    _add_protocol(decompose)

    compare = sub.add_parser("compare-detr", parents=[common], help="DETR vs MB matching agreement")
    _add_inputs(compare)
    compare.add_argument("--s", type=float, default=DEFAULT_CONSTANT_SCALE, help="Constant Laplace scale")
    compare.add_argument("--lambda-iou", type=float, default=DEFAULT_LAMBDA_IOU, help="GIoU weight")
    compare.add_argument("--lambda-l1", type=float, default=DEFAULT_LAMBDA_L1, help="L1 weight")
    compare.add_argument("--log-class", action="store_true", help="DETR classification term as -log p")

    selftest = sub.add_parser("selftest", parents=[common], help="Run the property suites on seeded random instances")
    selftest.add_argument("--seed", type=int, default=SELFTEST_SEED)
    selftest.add_argument("--iterations", type=int, default=SELFTEST_ITERATIONS)
    selftest.add_argument("--debug-corrupt", action="store_true", help="Corrupt the Murty cost matrix")
    selftest.add_argument("--property", dest="properties", action="append", choices=list(PROPERTIES))
    return parser


def _settings(args: argparse.Namespace, q: int) -> EvaluationSettings:
    return EvaluationSettings(
        q=q,
        r_threshold=args.r_threshold,
        apply_nms=args.nms,
        nms_iou=args.nms_iou,
        top_k=args.top_k,
        class_wise_nms=not args.class_agnostic_nms,
        clamp_r=args.clamp_r,
        include_crowd=args.include_crowd,
    )


def _run_evaluate(args: argparse.Namespace) -> int:
    dataset = read_ground_truth(args.gt_path)
    predictions = read_predictions(args.preds_path, dataset.label_map, family=args.family)
    results = evaluate_dataset(dataset, predictions, _settings(args, args.q), jobs=args.jobs)
    for path in write_report(results, args.out_path, fmt=args.fmt, exclude_infinite=args.exclude_infinite):
        logger.info("wrote %s", path)
    if args.histogram_path:
        logger.info("wrote %s", write_histograms(results, args.histogram_path))
    print_summary(aggregate(results, exclude_infinite=args.exclude_infinite))
    return EXIT_OK


def _run_decompose(args: argparse.Namespace) -> int:
    dataset = read_ground_truth(args.gt_path)
    predictions = read_predictions(args.preds_path, dataset.label_map, family=args.family)
    results = evaluate_dataset(dataset, predictions, _settings(args, 1), jobs=args.jobs)
    logger.info("wrote %s", write_histograms(results, args.out_path))
    print_summary(aggregate(results))
    return EXIT_OK


def _run_compare(args: argparse.Namespace) -> int:
    dataset = read_ground_truth(args.gt_path)
    predictions = read_predictions(args.preds_path, dataset.label_map, family=args.family)
    settings = ComparisonSettings(
        s=args.s,
        lambda_iou=args.lambda_iou,
        lambda_l1=args.lambda_l1,
        log_class=args.log_class,
        include_crowd=args.include_crowd,
    )
    rows, disagreements = compare_dataset(dataset, predictions, settings)
    for path in write_comparison(rows, disagreements, args.out_path, fmt=args.fmt):
        logger.info("wrote %s", path)
    print_summary(
        {
            "num_images": len(rows),
            "num_skipped": int(rows["skipped"].sum()),
            "agreement_rate": agreement_rate(rows),
            "num_disagreements": len(disagreements),
        }
    )
    return EXIT_OK


def _run_selftest(args: argparse.Namespace) -> int:
    results = run_selftest(args.seed, args.iterations, corrupt=args.debug_corrupt, properties=args.properties)
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        print(f"{status} {res.name} ({res.checked} instances){': ' + res.detail if res.detail else ''}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_PROPERTY_FAILURE


COMMANDS = {
    "evaluate": _run_evaluate,
    "decompose": _run_decompose,
    "compare-detr": _run_compare,
    "selftest": _run_selftest,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format=LOG_FORMAT)
    try:
        return COMMANDS[args.command](args)
    except SchemaError as exc:
        logger.error("schema error: %s", exc)
        return EXIT_SCHEMA_ERROR
    except ValueError as exc:
        logger.error("invalid argument: %s", exc)
        return EXIT_USAGE_ERROR
    except OSError as exc:
        logger.error("I/O error: %s", exc)
        return EXIT_IO_ERROR


if __name__ == "__main__":
    raise SystemExit(main())

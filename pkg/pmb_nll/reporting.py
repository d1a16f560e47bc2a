"""
Report Tables and Exports
=========================

Per-image rows, the dataset aggregate (means per image and per relevant
prediction), and decomposition histograms split by COCO object size.
Rows are always ordered by image_id so that reports are byte-identical
regardless of how many workers produced them.

Sections:
    1. Per-image rows and aggregate
    2. Histograms
    3. Writers
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Sequence, Union

import numpy as np
import pandas as pd

from pmb_nll.boxes import size_class
from pmb_nll.config import HISTOGRAM_BINS, HISTOGRAM_CLIP, SIZE_CLASSES
from pmb_nll.types import NllReport

REPORT_FORMATS = ("csv", "json", "parquet")
TERMS = ("regression", "classification", "false_detection", "missed_match", "ppp_rate")
REPORT_COLUMNS = [
    "image_id",
    "nll",
    "q_used",
    *TERMS,
    "num_matched",
    "num_unmatched",
    "num_ppp",
    "infinite",
]
HISTOGRAM_COLUMNS = ["bin_left", "bin_right", "count", "size_class", "term"]


@dataclass(frozen=True)
class ImageResult:
    image_id: int
    report: NllReport
    num_objects: int
    num_predictions: int


# =============================================================================
# SECTION 1: Per-image rows and aggregate
# =============================================================================


def report_frame(results: Sequence[ImageResult]) -> pd.DataFrame:
    """One row per image, sorted by image_id."""
    rows = []
    for res in sorted(results, key=lambda r: r.image_id):
        d = res.report.decomposition
        rows.append(
            {
                "image_id": res.image_id,
                "nll": res.report.nll,
                "q_used": res.report.q_used,
                "regression": d.regression,
                "classification": d.classification,
                "false_detection": d.false_detection,
                "missed_match": d.missed_match,
                "ppp_rate": d.ppp_rate,
                "num_matched": d.num_matched,
                "num_unmatched": d.num_unmatched,
                "num_ppp": d.num_ppp,
                "infinite": res.report.is_infinite,
            }
        )
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else math.nan


def aggregate(results: Sequence[ImageResult], exclude_infinite: bool = False) -> dict[str, Any]:
    """
    Dataset-level means.

    Per-image means divide by the number of images kept. Per-prediction means
    divide each term by the count of predictions it concerns: matched pairs
    for regression/classification, unmatched Bernoullis for false detections,
    PPP-matched objects for missed matches.

    Args:
        results: Per-image results.
        exclude_infinite: Drop images with infinite NLL from every mean and
            report how many were dropped.
    """
    df = report_frame(results)
    num_infinite = int(df["infinite"].sum()) if len(df) else 0
    kept = df[~df["infinite"]] if exclude_infinite else df
    n = len(kept)

    out: dict[str, Any] = {
        "num_images": int(len(df)),
        "num_infinite": num_infinite,
        "num_excluded_infinite": num_infinite if exclude_infinite else 0,
        "num_images_used": int(n),
        "empty": n == 0,
    }
    # fixed summation order (image_id) keeps the aggregate deterministic
    sums = {col: math.fsum(kept[col].astype(float)) if n else 0.0 for col in ("nll", *TERMS)}
    counts = {col: int(kept[col].sum()) if n else 0 for col in ("num_matched", "num_unmatched", "num_ppp")}

    out["mean_nll"] = _ratio(sums["nll"], n)
    for term in TERMS:
        out[f"mean_{term}_per_image"] = _ratio(sums[term], n)
    out["mean_regression_per_prediction"] = _ratio(sums["regression"], counts["num_matched"])
    out["mean_classification_per_prediction"] = _ratio(sums["classification"], counts["num_matched"])
    out["mean_false_detection_per_prediction"] = _ratio(sums["false_detection"], counts["num_unmatched"])
    out["mean_missed_match_per_object"] = _ratio(sums["missed_match"], counts["num_ppp"])
    out.update({f"total_{k}": v for k, v in counts.items()})
    return out


def print_dashed_table(df: pd.DataFrame, cols: list[str]) -> None:
    df = df[cols].copy()
    for c in cols:
        if pd.api.types.is_float_dtype(df[c]):
            df[c] = df[c].map(lambda v: f"{v:.4f}")
    widths = {c: max(len(c), df[c].astype(str).map(len).max() if len(df) else 0) for c in cols}

    def fmt_row(d: dict) -> str:
        return " | ".join(f"{str(d[c]):<{widths[c]}}" for c in cols)

    header = fmt_row({c: c for c in cols})
    sep = "-" * len(header)

    print(sep)
    print(header)
    print(sep)
    for _, r in df.iterrows():
        print(fmt_row(r.to_dict()))
    print(sep)


def print_summary(summary: dict[str, Any]) -> None:
    table = pd.DataFrame({"metric": list(summary), "value": [str(v) for v in summary.values()]})
    print_dashed_table(table, ["metric", "value"])


# =============================================================================
# SECTION 2: Histograms
# =============================================================================


def _contribution_values(results: Sequence[ImageResult]) -> pd.DataFrame:
    rows = []
    for res in sorted(results, key=lambda r: r.image_id):
        for c in res.report.decomposition.contributions:
            rows.append(
                {
                    "term": c.term,
                    "value": c.value,
                    "size_class": size_class(c.gt_area) if c.gt_area is not None else None,
                }
            )
    return pd.DataFrame(rows, columns=["term", "value", "size_class"])


def histogram_frame(
    results: Sequence[ImageResult],
    bins: int = HISTOGRAM_BINS,
    clip: Optional[dict[str, float]] = None,
) -> pd.DataFrame:
    """
    Histograms of per-prediction decomposition contributions.

    Values above the term's clip limit (3 for classification, 40 for the
    other terms) are counted in the last bin. Terms tied to an object
    (regression, classification, missed_match) are also split by COCO size
    class; every term gets an "all" histogram.

    Returns:
        DataFrame with columns bin_left, bin_right, count, size_class, term.
    """
    clip = dict(HISTOGRAM_CLIP if clip is None else clip)
    values = _contribution_values(results)
    frames = []
    for term, upper in clip.items():
        sub = values[values["term"] == term]
        v = np.minimum(sub["value"].to_numpy(dtype=float), upper)
        lower = min(0.0, math.floor(float(v.min()))) if v.size else 0.0
        edges = np.linspace(lower, upper, bins + 1)
        groups = [("all", v)]
        if term != "false_detection":
            for cls in SIZE_CLASSES:
                groups.append((cls, v[(sub["size_class"] == cls).to_numpy()]))
        for name, group in groups:
            counts, _ = np.histogram(group, bins=edges)
            frames.append(
                pd.DataFrame(
                    {
                        "bin_left": edges[:-1],
                        "bin_right": edges[1:],
                        "count": counts.astype(int),
                        "size_class": name,
                        "term": term,
                    }
                )
            )
    if not frames:
        return pd.DataFrame(columns=HISTOGRAM_COLUMNS)
    return pd.concat(frames, ignore_index=True)[HISTOGRAM_COLUMNS]


# =============================================================================
# SECTION 3: Writers
# =============================================================================


def _sidecar(path: Path, suffix: str) -> Path:
    return path.with_name(f"{path.stem}_aggregate{suffix}")


def _json_value(v: Any) -> Any:
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def write_report(
    results: Sequence[ImageResult],
    path: Union[str, Path],
    fmt: str = "csv",
    exclude_infinite: bool = False,
) -> list[Path]:
    """
    Write per-image rows plus the aggregate block.

    csv and parquet put the aggregate in a sibling "<stem>_aggregate" file;
    json writes {"images": [...], "aggregate": {...}} with non-finite values
    as Infinity / NaN.

    Returns:
        Paths written.
    """
    if fmt not in REPORT_FORMATS:
        raise ValueError(f"unknown report format '{fmt}', expected one of {REPORT_FORMATS}")
    path = Path(path)
    rows = report_frame(results)
    summary = aggregate(results, exclude_infinite=exclude_infinite)

    if fmt == "json":
        doc = {
            "images": [{k: _json_value(v) for k, v in row.items()} for row in rows.to_dict("records")],
            "aggregate": {k: _json_value(v) for k, v in summary.items()},
        }
        with path.open("w", encoding="utf-8", newline="\n") as fh:
            json.dump(doc, fh, indent=1)
        return [path]

    summary_df = pd.DataFrame([summary])
    if fmt == "csv":
        side = _sidecar(path, ".csv")
        rows.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
        summary_df.to_csv(side, index=False, encoding="utf-8", lineterminator="\n")
    else:
        side = _sidecar(path, ".parquet")
        rows.to_parquet(path, index=False)
        summary_df.to_parquet(side, index=False)
    return [path, side]


def write_histograms(
    results: Sequence[ImageResult],
    path: Union[str, Path],
    bins: int = HISTOGRAM_BINS,
) -> Path:
    path = Path(path)
    histogram_frame(results, bins=bins).to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
    return path


def write_comparison(rows: pd.DataFrame, disagreements: pd.DataFrame, path: Union[str, Path], fmt: str = "csv") -> list[Path]:
    """Per-image agreement rows plus a sibling "<stem>_disagreements" listing."""
    if fmt not in REPORT_FORMATS:
        raise ValueError(f"unknown report format '{fmt}', expected one of {REPORT_FORMATS}")
    path = Path(path)
    if fmt == "json":
        doc = {
            "images": [{k: _json_value(v) for k, v in r.items()} for r in rows.to_dict("records")],
            "disagreements": [{k: _json_value(v) for k, v in r.items()} for r in disagreements.to_dict("records")],
        }
        with path.open("w", encoding="utf-8", newline="\n") as fh:
            json.dump(doc, fh, indent=1)
        return [path]
    suffix = ".csv" if fmt == "csv" else ".parquet"
    side = path.with_name(f"{path.stem}_disagreements{suffix}")
    if fmt == "csv":
        rows.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
        disagreements.to_csv(side, index=False, encoding="utf-8", lineterminator="\n")
    else:
        rows.astype({"agree": "boolean", "constant_scale_agree": "boolean", "num_disagreements": "Int64"}).to_parquet(
            path, index=False
        )
        disagreements.to_parquet(side, index=False)
    return [path, side]

from __future__ import annotations

import os
from typing import Optional


# ---------------------------------------------------------------------------
# Evaluation protocol (COCO-style inference, PMB-NLL scoring)
# ---------------------------------------------------------------------------

DEFAULT_Q = 25  # number of best assignments kept in the NLL approximation
DEFAULT_R_THRESHOLD = 0.1  # predictions with r < threshold feed the PPP intensity
DEFAULT_FAMILY = "laplace"
DEFAULT_NMS_IOU = 0.5
DEFAULT_TOP_K = 100
DEFAULT_CLASS_WISE_NMS = True
DEFAULT_INCLUDE_CROWD = False


# ---------------------------------------------------------------------------
# Numerical tolerances
# ---------------------------------------------------------------------------

CLASS_SUM_TOL = 1e-9  # ClassDistribution must sum to 1 within this
INPUT_PROB_SUM_TOL = 1e-6  # tolerance accepted on raw prediction files
PPP_WEIGHT_SUM_TOL = 1e-12
R_CLAMP_EPS = 1e-12  # --clamp-r maps r to min(r, 1 - R_CLAMP_EPS)
R_BOUNDARY_EPS = 1e-9  # r above 1 - eps switches to direct likelihood evaluation


# ---------------------------------------------------------------------------
# Brute-force oracle guards
# ---------------------------------------------------------------------------

MAX_BRUTE_FORCE_BERNOULLIS = 8
MAX_BRUTE_FORCE_OBJECTS = 6


# ---------------------------------------------------------------------------
# COCO object size classes (area thresholds in pixels^2)
# ---------------------------------------------------------------------------

SMALL_AREA_MAX = 32.0**2
MEDIUM_AREA_MAX = 96.0**2
SIZE_CLASSES = ("small", "medium", "large")


# ---------------------------------------------------------------------------
# Decomposition histograms
# ---------------------------------------------------------------------------

HISTOGRAM_BINS = 40
HISTOGRAM_CLIP = {
    "regression": 40.0,
    "classification": 3.0,
    "false_detection": 40.0,
    "missed_match": 40.0,
}


# ---------------------------------------------------------------------------
# DETR matching-cost comparison
# ---------------------------------------------------------------------------

DEFAULT_CONSTANT_SCALE = 0.2
DEFAULT_LAMBDA_IOU = 2.0
DEFAULT_LAMBDA_L1 = 5.0
MATCHING_TIE_RTOL = 1e-12  # permutations whose costs agree this closely are ties
MATCHING_TIE_ATOL = 1e-9


# ---------------------------------------------------------------------------
# Prediction interchange schema
# ---------------------------------------------------------------------------

PREDICTION_SCHEMA_VERSION = 1
SUPPORTED_SCHEMA_VERSIONS = (1,)


# ---------------------------------------------------------------------------
# Self-test defaults
# ---------------------------------------------------------------------------

SELFTEST_SEED = 20220607
SELFTEST_ITERATIONS = 200


# ---------------------------------------------------------------------------
# Worker count
# ---------------------------------------------------------------------------


def resolve_jobs(jobs: Optional[int] = None) -> int:
    """
    Resolve the number of worker processes used across images.

    Priority:
        1. Explicit value (CLI --jobs)
        2. PMB_NLL_JOBS environment variable (if set)
        3. os.cpu_count()
    """
    if jobs is not None and jobs > 0:
        return jobs
    env_jobs = os.getenv("PMB_NLL_JOBS")
    if env_jobs:
        try:
            value = int(env_jobs)
        except ValueError:
            raise ValueError(f"PMB_NLL_JOBS must be an integer, got {env_jobs!r}") from None
        if value > 0:
            return value
    return os.cpu_count() or 1

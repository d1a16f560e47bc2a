import logging
import time

import numpy as np
import pytest

from pmb_nll.workflows.evaluate import EvaluationSettings, evaluate_image
from pmb_nll.synthetic import synthetic_image
from pmb_nll.workflows.selftest import (
    PROPERTIES,
    check_decomposition_identity,
    check_detr_equivalence,
    check_gradients,
    check_murty_prefix,
    check_oracle_equivalence,
    check_q_monotonicity,
    run_selftest,
)


def test_default_suite_passes():
    results = run_selftest(seed=7, iterations=10)
    assert [r.name for r in results] == list(PROPERTIES)
    assert all(r.passed for r in results), [r.detail for r in results if not r.passed]
    assert all(r.checked == 10 for r in results)


def test_same_seed_same_outcome():
    a = run_selftest(seed=3, iterations=5, properties=["oracle_equivalence"])
    b = run_selftest(seed=3, iterations=5, properties=["oracle_equivalence"])
    assert a == b


def test_corrupted_costs_fail_murty_prefix():
    (result,) = run_selftest(seed=11, iterations=5, corrupt=True, properties=["murty_prefix"])
    assert not result.passed
    assert "cost" in result.detail


def test_corruption_leaves_other_properties_alone():
    (result,) = run_selftest(seed=11, iterations=5, corrupt=True, properties=["oracle_equivalence"])
    assert result.passed


def test_zero_iterations_warns_and_passes(caplog):
    with caplog.at_level(logging.WARNING, logger="pmb_nll.workflows.selftest"):
        results = run_selftest(iterations=0)
    assert all(r.passed and r.checked == 0 for r in results)
    assert "0 iterations" in caplog.text


def test_invalid_arguments():
    with pytest.raises(ValueError):
        run_selftest(iterations=-1)
    with pytest.raises(ValueError):
        run_selftest(properties=["no_such_property"])


@pytest.mark.slow
def test_oracle_and_murty_over_1000_instances():
    start = time.perf_counter()
    assert check_oracle_equivalence(np.random.default_rng([1, 0]), 1000) == 1000
    assert time.perf_counter() - start < 30.0
    assert check_murty_prefix(np.random.default_rng([1, 1]), 1000) == 1000


@pytest.mark.slow
def test_q_convergence_and_decomposition_over_1000_instances():
    assert check_q_monotonicity(np.random.default_rng([2, 0]), 1000) == 1000
    assert check_decomposition_identity(np.random.default_rng([2, 1]), 1000) == 1000


@pytest.mark.slow
def test_gradients_over_200_instances():
    assert check_gradients(np.random.default_rng([3, 0]), 200) == 200


@pytest.mark.slow
def test_detr_equivalence_over_500_instances():
    assert check_detr_equivalence(np.random.default_rng([4, 0]), 500) == 500


@pytest.mark.slow
def test_detector_sized_images_evaluate_quickly():
    rng = np.random.default_rng(2022)
    images = [synthetic_image(rng, num_predictions=100, max_objects=20) for _ in range(1000)]
    settings = EvaluationSettings(q=25)
    start = time.perf_counter()
    for image_id, (preds, gts) in enumerate(images):
        evaluate_image(image_id, preds, gts, settings)
    assert time.perf_counter() - start < 60.0

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import laplace, norm

from pmb_nll.density import (
    brute_force_log_pmb,
    log_bernoulli_set,
    log_box_density,
    log_box_density_many,
    log_ppp_intensity,
    log_single_object_density,
    log_sum_exp,
    pairwise_log_likelihoods,
)
from pmb_nll.errors import BruteForceLimitError
from pmb_nll.synthetic import random_instance
from pmb_nll.types import (
    BoundingBox,
    BoxDistribution,
    ClassDistribution,
    GroundTruthSet,
    IntensityComponent,
    PmbDensity,
    PoissonIntensity,
)

from conftest import gt, laplace_bernoulli

BOX = BoundingBox(0.0, 0.0, 10.0, 10.0)


def test_log_sum_exp_edge_cases():
    assert log_sum_exp([]) == -math.inf
    assert log_sum_exp([-math.inf, -math.inf]) == -math.inf
    assert log_sum_exp([-math.inf, 0.0]) == 0.0
    assert log_sum_exp([1000.0, 1000.0]) == pytest.approx(1000.0 + math.log(2.0))


def test_laplace_at_its_mean_with_half_scale_is_zero():
    dist = BoxDistribution.laplace(BOX, (0.5, 0.5, 0.5, 0.5))
    assert log_box_density(dist, BOX) == pytest.approx(0.0, abs=1e-15)


def test_laplace_one_unit_deviation():
    dist = BoxDistribution.laplace(BOX, (1.0, 1.0, 1.0, 1.0))
    value = log_box_density(dist, BoundingBox(1.0, 0.0, 10.0, 10.0))
    assert value == pytest.approx(-4.0 * math.log(2.0) - 1.0)
    assert round(value, 4) == -3.7726


def test_cholesky_two_identity_at_mean():
    lower = [2.0, 0.0, 2.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 2.0]
    dist = BoxDistribution.cholesky(BOX, lower)
    expected = -2.0 * math.log(2.0 * math.pi) - 4.0 * math.log(2.0)
    assert log_box_density(dist, BOX) == pytest.approx(expected)
    assert expected == pytest.approx(-6.4483, abs=1e-4)


@given(
    offsets=st.lists(st.floats(-20.0, 20.0), min_size=4, max_size=4),
    scales=st.lists(st.floats(0.1, 10.0), min_size=4, max_size=4),
)
@settings(max_examples=60, deadline=None)
def test_independent_families_match_univariate_products(offsets, scales):
    b = BoundingBox.from_array(BOX.as_array() + np.array(offsets))
    lap = BoxDistribution.laplace(BOX, scales)
    gau = BoxDistribution.gaussian(BOX, scales)
    chol = BoxDistribution.cholesky(
        BOX, [scales[0], 0.0, scales[1], 0.0, 0.0, scales[2], 0.0, 0.0, 0.0, scales[3]]
    )
    expected_lap = laplace.logpdf(b.as_array(), loc=BOX.as_array(), scale=scales).sum()
    expected_gau = norm.logpdf(b.as_array(), loc=BOX.as_array(), scale=scales).sum()
    assert log_box_density(lap, b) == pytest.approx(expected_lap, rel=1e-12, abs=1e-9)
    assert log_box_density(gau, b) == pytest.approx(expected_gau, rel=1e-12, abs=1e-9)
    assert log_box_density(chol, b) == pytest.approx(expected_gau, rel=1e-12, abs=1e-9)


def test_full_cholesky_matches_multivariate_normal(rng):
    from scipy.stats import multivariate_normal

    L = np.tril(rng.uniform(-0.5, 0.5, size=(4, 4))) + np.diag([1.0, 2.0, 1.5, 0.7])
    dist = BoxDistribution.cholesky(BOX, L[np.tril_indices(4)])
    b = BoundingBox(1.0, -2.0, 9.0, 11.5)
    expected = multivariate_normal(mean=BOX.as_array(), cov=L @ L.T).logpdf(b.as_array())
    assert log_box_density(dist, b) == pytest.approx(expected, rel=1e-10)


def test_single_object_density():
    half = (0.5, 0.5, 0.5, 0.5)
    comp = laplace_bernoulli(0.9, (1.0, 0.0), BOX.as_tuple(), half)
    assert log_single_object_density(comp, gt(0, BOX.as_tuple())) == pytest.approx(0.0, abs=1e-15)
    assert log_single_object_density(comp, gt(1, (3, 3, 4, 4))) == -math.inf

    comp = laplace_bernoulli(0.9, (0.6, 0.4), BOX.as_tuple())
    value = log_single_object_density(comp, gt(1, (1.0, 0.0, 10.0, 10.0)))
    assert value == pytest.approx(math.log(0.4) - 4.0 * math.log(2.0) - 1.0)
    assert round(value, 4) == -4.6889


def test_bernoulli_set_density(bernoulli_r075):
    assert log_bernoulli_set(bernoulli_r075, []) == pytest.approx(math.log(0.25))
    assert log_bernoulli_set(bernoulli_r075.with_r(1.0), []) == -math.inf
    two = [gt(0, BOX.as_tuple()), gt(1, BOX.as_tuple())]
    assert log_bernoulli_set(bernoulli_r075, two) == -math.inf


def _component_with_log_density(weight, log_density):
    # evaluated at its own mean: log p = -4 log(2 s)
    s = math.exp(-log_density / 4.0) / 2.0
    box = BoxDistribution.laplace(BOX, (s, s, s, s))
    return IntensityComponent(weight, ClassDistribution((1.0,)), box)


def test_ppp_intensity_single_component():
    ppp = PoissonIntensity((_component_with_log_density(0.05, -2.0),))
    assert log_ppp_intensity(ppp, gt(0, BOX.as_tuple())) == pytest.approx(math.log(0.05) - 2.0)
    assert round(math.log(0.05) - 2.0, 4) == -4.9957


def test_ppp_intensity_mixture_matches_linear_sum():
    comps = [_component_with_log_density(w, ld) for w, ld in ((0.05, -2.0), (0.3, -4.0), (0.01, -1.0))]
    ppp = PoissonIntensity(tuple(comps))
    expected = math.log(0.05 * math.exp(-2.0) + 0.3 * math.exp(-4.0) + 0.01 * math.exp(-1.0))
    assert log_ppp_intensity(ppp, gt(0, BOX.as_tuple())) == pytest.approx(expected, rel=1e-12)


def test_empty_intensity_is_neg_inf():
    assert log_ppp_intensity(PoissonIntensity.empty(), gt(0, BOX.as_tuple())) == -math.inf


def test_brute_force_simple_cases(bernoulli_r075):
    cls = ClassDistribution((1.0,))
    box = BoxDistribution.laplace(BOX, (1, 1, 1, 1))
    ppp = PoissonIntensity((IntensityComponent(0.3, cls, box),))
    assert brute_force_log_pmb(PmbDensity((), ppp), GroundTruthSet()) == pytest.approx(-0.3)
    pmb = PmbDensity.multi_bernoulli([bernoulli_r075])
    assert brute_force_log_pmb(pmb, GroundTruthSet()) == pytest.approx(math.log(0.25))


def test_brute_force_two_by_two_mb_sums_two_permutations(two_object_scene):
    preds, objects = two_object_scene
    pmb = PmbDensity.multi_bernoulli(preds)
    a, b = preds
    y0, y1 = objects
    term1 = math.log(a.r) + log_single_object_density(a, y0) + math.log(b.r) + log_single_object_density(b, y1)
    term2 = math.log(a.r) + log_single_object_density(a, y1) + math.log(b.r) + log_single_object_density(b, y0)
    assert brute_force_log_pmb(pmb, objects) == pytest.approx(log_sum_exp([term1, term2]), rel=1e-12)


def test_brute_force_guard():
    preds = [laplace_bernoulli(0.5, (1.0,), BOX.as_tuple())] * 9
    with pytest.raises(BruteForceLimitError):
        brute_force_log_pmb(PmbDensity.multi_bernoulli(preds), GroundTruthSet())


def test_pairwise_tables_match_scalar_calls(rng):
    for _ in range(20):
        pmb, gts = random_instance(rng, families=("laplace", "gaussian", "cholesky"))
        tables = pairwise_log_likelihoods(pmb, gts)
        for i, comp in enumerate(pmb.bernoullis):
            for j, y in enumerate(gts):
                assert tables.log_p[i, j] == pytest.approx(log_single_object_density(comp, y), rel=1e-10)
        for j, y in enumerate(gts):
            assert tables.log_intensity[j] == pytest.approx(log_ppp_intensity(pmb.ppp, y), rel=1e-10)
        assert tables.expected_cardinality == pmb.ppp.expected_cardinality


def _importance_integral(dist, proposal_logpdf, samples):
    # E_q[p / q] over draws from a proposal wider than the target
    log_ratio = log_box_density_many(dist, samples) - proposal_logpdf(samples)
    return float(np.mean(np.exp(log_ratio)))


def test_laplace_density_integrates_to_one():
    rng = np.random.default_rng(5)
    scales = np.array([0.5, 1.0, 2.0, 4.0])
    dist = BoxDistribution.laplace(BOX, scales)
    samples = BOX.as_array() + rng.laplace(0.0, 1.5 * scales, size=(200_000, 4))

    def proposal(x):
        return laplace.logpdf(x, loc=BOX.as_array(), scale=1.5 * scales).sum(axis=1)

    assert _importance_integral(dist, proposal, samples) == pytest.approx(1.0, rel=0.01)


def test_full_cholesky_density_integrates_to_one():
    from scipy.stats import multivariate_normal

    rng = np.random.default_rng(6)
    L = np.tril(rng.uniform(-0.5, 0.5, size=(4, 4))) + np.diag([1.0, 2.0, 1.5, 0.7])
    dist = BoxDistribution.cholesky(BOX, L[np.tril_indices(4)])
    proposal = multivariate_normal(mean=BOX.as_array(), cov=2.0 * L @ L.T)
    samples = proposal.rvs(size=200_000, random_state=rng)
    assert _importance_integral(dist, proposal.logpdf, samples) == pytest.approx(1.0, rel=0.01)


@given(
    r=st.floats(0.01, 0.99),
    offsets=st.lists(st.floats(-5.0, 5.0), min_size=4, max_size=4),
    class_id=st.integers(0, 1),
)
@settings(max_examples=60, deadline=None)
def test_singleton_bernoulli_is_empty_term_times_odds(r, offsets, class_id):
    comp = laplace_bernoulli(r, (0.3, 0.7), BOX.as_tuple(), (1.0, 2.0, 0.5, 1.5))
    y = gt(class_id, tuple(BOX.as_array() + np.array(offsets)))
    lhs = log_bernoulli_set(comp, []) + math.log(r / (1.0 - r)) + log_single_object_density(comp, y)
    assert lhs == pytest.approx(log_bernoulli_set(comp, [y]), rel=1e-12, abs=1e-12)

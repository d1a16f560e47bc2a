import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmb_nll.assignment import CostMatrix, build_cost_matrix, enumerate_all, murty_k_best, solve_optimal
from pmb_nll.density import log_ppp_intensity, log_single_object_density
from pmb_nll.errors import BruteForceLimitError
from pmb_nll.synthetic import random_instance
from pmb_nll.types import (
    PPP,
    BoundingBox,
    BoxDistribution,
    ClassDistribution,
    GroundTruthSet,
    IntensityComponent,
    PmbDensity,
    PoissonIntensity,
)

from conftest import gt, laplace_bernoulli

INF = math.inf


def _ppp_block(diagonal):
    n = len(diagonal)
    block = np.full((n, n), INF)
    block[np.arange(n), np.arange(n)] = diagonal
    return block


def _random_costs(rng, m, n, ppp=True):
    upper = rng.uniform(-3.0, 5.0, size=(m, n))
    diagonal = rng.uniform(-1.0, 6.0, size=n) if ppp else np.full(n, INF)
    return CostMatrix(np.vstack([upper, _ppp_block(diagonal)]), m)


def _exhaustive_minimum(costs):
    best = INF
    m, n = costs.num_bernoullis, costs.num_objects
    for targets in itertools.product(list(range(m)) + [PPP], repeat=n):
        used = [t for t in targets if t != PPP]
        if len(set(used)) != len(used):
            continue
        best = min(best, costs.cost_of(targets))
    return best


def test_cost_matrix_validation():
    with pytest.raises(ValueError):
        CostMatrix(np.zeros((3, 2)), 2)  # wrong row count
    with pytest.raises(ValueError):
        CostMatrix(np.vstack([np.zeros((1, 2)), np.zeros((2, 2))]), 1)  # finite PPP off-diagonal
    with pytest.raises(ValueError):
        CostMatrix(np.vstack([[[-INF]], [[0.0]]]), 1)
    costs = CostMatrix(np.vstack([[[1.0]], [[2.0]]]), 1)
    assert not costs.values.flags.writeable


def test_cost_entry_for_even_odds_is_zero():
    # r = 0.5 and log p(y) = 0: -log(1 * 0.5 / 0.5) = 0
    b = laplace_bernoulli(0.5, (1.0,), (0, 0, 10, 10), (0.5, 0.5, 0.5, 0.5))
    costs = build_cost_matrix(PmbDensity.multi_bernoulli([b]), GroundTruthSet((gt(0, (0, 0, 10, 10)),)))
    assert costs.values[0, 0] == pytest.approx(0.0, abs=1e-15)


def test_empty_ppp_forbids_lower_block(two_object_scene):
    preds, objects = two_object_scene
    costs = build_cost_matrix(PmbDensity.multi_bernoulli(preds), objects)
    assert costs.shape == (4, 2)
    assert np.all(np.isposinf(costs.values[2:]))


def test_two_object_cost_entries_match_density_calls(two_object_scene):
    preds, objects = two_object_scene
    costs = build_cost_matrix(PmbDensity.multi_bernoulli(preds), objects)
    for i, b in enumerate(preds):
        for j, y in enumerate(objects):
            expected = -(math.log(b.r) + log_single_object_density(b, y) - math.log(1.0 - b.r))
            assert costs.values[i, j] == pytest.approx(expected, rel=1e-12)


def test_ppp_diagonal_entries(rng):
    pmb, gts = random_instance(rng, min_objects=2)
    costs = build_cost_matrix(pmb, gts)
    m = pmb.num_bernoullis
    for j, y in enumerate(gts):
        assert costs.values[m + j, j] == pytest.approx(-log_ppp_intensity(pmb.ppp, y), rel=1e-12)


def test_existence_of_one_is_rejected_unless_clamped():
    b = laplace_bernoulli(1.0, (1.0,), (0, 0, 10, 10))
    pmb = PmbDensity.multi_bernoulli([b])
    gts = GroundTruthSet((gt(0, (0, 0, 10, 10)),))
    with pytest.raises(ValueError):
        build_cost_matrix(pmb, gts)
    costs = build_cost_matrix(pmb, gts, clamp_r=True)
    assert np.isfinite(costs.values[0, 0])


def test_zero_existence_is_forbidden():
    b = laplace_bernoulli(0.0, (1.0,), (0, 0, 10, 10))
    costs = build_cost_matrix(PmbDensity.multi_bernoulli([b]), GroundTruthSet((gt(0, (0, 0, 10, 10)),)))
    assert costs.values[0, 0] == INF


def test_solve_single_entry():
    costs = CostMatrix(np.array([[1.7], [INF]]), 1)
    a = solve_optimal(costs)
    assert a.gt_to_target == (0,)
    assert a.total_cost == 1.7


def test_pure_mb_with_too_many_objects_is_infeasible():
    costs = CostMatrix(np.vstack([[[1.0, 2.0]], _ppp_block([INF, INF])]), 1)
    assert solve_optimal(costs) is None
    assert murty_k_best(costs, 5) == []
    assert enumerate_all(costs) == []


def test_no_objects_gives_empty_assignment():
    costs = CostMatrix(np.zeros((3, 0)), 3)
    a = solve_optimal(costs)
    assert a.gt_to_target == ()
    assert a.total_cost == 0.0


@given(seed=st.integers(0, 2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_solve_optimal_matches_exhaustive_minimum(seed):
    rng = np.random.default_rng(seed)
    costs = _random_costs(rng, 2, 4)
    assert solve_optimal(costs).total_cost == pytest.approx(_exhaustive_minimum(costs), abs=1e-12)


def test_murty_q1_is_optimal(rng):
    costs = _random_costs(rng, 3, 3)
    assert murty_k_best(costs, 1) == [solve_optimal(costs)]
    with pytest.raises(ValueError):
        murty_k_best(costs, 0)


def test_murty_two_object_scene_returns_two_assignments(two_object_scene):
    preds, objects = two_object_scene
    ranked = murty_k_best(build_cost_matrix(PmbDensity.multi_bernoulli(preds), objects), 4)
    assert len(ranked) == 2
    assert {a.gt_to_target for a in ranked} == {(0, 1), (1, 0)}
    assert ranked[0].total_cost <= ranked[1].total_cost


@given(seed=st.integers(0, 2**32 - 1), m=st.integers(0, 4), n=st.integers(0, 3), ppp=st.booleans())
@settings(max_examples=80, deadline=None)
def test_murty_full_ranking_equals_enumeration(seed, m, n, ppp):
    rng = np.random.default_rng(seed)
    costs = _random_costs(rng, m, n, ppp)
    full = enumerate_all(costs)
    ranked = murty_k_best(costs, max(1, len(full)))
    assert [a.gt_to_target for a in ranked] == [a.gt_to_target for a in full]
    assert [a.total_cost for a in ranked] == pytest.approx([a.total_cost for a in full], abs=1e-12)
    costs_seq = [a.total_cost for a in ranked]
    assert costs_seq == sorted(costs_seq)


def test_murty_prefix_property(rng):
    costs = _random_costs(rng, 4, 3)
    full = murty_k_best(costs, 50)
    for q in (1, 3, 7, 20):
        assert murty_k_best(costs, q) == full[:q]


def test_enumeration_counts():
    one = CostMatrix(np.array([[1.0], [2.0]]), 1)
    assert len(enumerate_all(one)) == 2
    two = CostMatrix(np.vstack([np.ones((2, 2)), _ppp_block([1.0, 1.0])]), 2)
    assert len(enumerate_all(two)) == 7
    forbidden = CostMatrix(np.full((3, 2), INF), 1)
    assert enumerate_all(forbidden) == []


def test_enumeration_guard():
    costs = CostMatrix(np.vstack([np.ones((9, 1)), [[1.0]]]), 9)
    with pytest.raises(BruteForceLimitError):
        enumerate_all(costs)


def test_ties_broken_lexicographically():
    costs = CostMatrix(np.vstack([np.ones((2, 2)), _ppp_block([INF, INF])]), 2)
    ranked = murty_k_best(costs, 2)
    assert [a.gt_to_target for a in ranked] == [(0, 1), (1, 0)]


def test_ppp_only_instance():
    cls = ClassDistribution((1.0,))
    box = BoxDistribution.laplace(BoundingBox(0, 0, 10, 10), (1, 1, 1, 1))
    pmb = PmbDensity((), PoissonIntensity((IntensityComponent(0.4, cls, box),)))
    gts = GroundTruthSet((gt(0, (0, 0, 10, 10)), gt(0, (1, 1, 11, 11))))
    ranked = murty_k_best(build_cost_matrix(pmb, gts), 3)
    assert [a.gt_to_target for a in ranked] == [(PPP, PPP)]


def test_ties_cut_at_q_are_lexicographic():
    # (PPP, PPP), (PPP, 0) and (2, 1) all cost 2; the cut at q must keep the smallest
    costs = CostMatrix(np.vstack([[[2.0, 2.0], [1.0, 1.0], [1.0, 2.0]], _ppp_block([0.0, 2.0])]), 3)
    ranked = murty_k_best(costs, 2)
    assert [a.gt_to_target for a in ranked] == [(PPP, 1), (PPP, PPP)]
    assert [a.total_cost for a in ranked] == [1.0, 2.0]


@given(seed=st.integers(0, 2**32 - 1), m=st.integers(0, 4), n=st.integers(1, 3), q=st.integers(1, 12))
@settings(max_examples=150, deadline=None)
def test_murty_with_integer_ties_is_enumeration_prefix(seed, m, n, q):
    rng = np.random.default_rng(seed)
    upper = rng.integers(0, 3, size=(m, n)).astype(float)
    upper[rng.uniform(size=(m, n)) < 0.15] = INF
    costs = CostMatrix(np.vstack([upper, _ppp_block(rng.integers(0, 3, size=n).astype(float))]), m)
    assert murty_k_best(costs, q) == enumerate_all(costs)[:q]


@given(seed=st.integers(0, 2**32 - 1), column=st.integers(0, 2), delta=st.floats(-4.0, 4.0))
@settings(max_examples=60, deadline=None)
def test_column_shift_moves_every_cost_by_delta(seed, column, delta):
    rng = np.random.default_rng(seed)
    costs = _random_costs(rng, 3, 3)
    shifted = np.array(costs.values, copy=True)
    shifted[:, column] += delta
    before = enumerate_all(costs)
    after = enumerate_all(CostMatrix(shifted, 3))
    assert [a.gt_to_target for a in after] == [a.gt_to_target for a in before]
    assert [a.total_cost for a in after] == pytest.approx([a.total_cost + delta for a in before], abs=1e-9)
    assert solve_optimal(CostMatrix(shifted, 3)).gt_to_target == before[0].gt_to_target


@given(seed=st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_solve_optimal_follows_bernoulli_row_permutation(seed):
    rng = np.random.default_rng(seed)
    m, n = 4, 3
    costs = _random_costs(rng, m, n)
    perm = rng.permutation(m)
    permuted = CostMatrix(np.vstack([costs.values[perm], costs.values[m:]]), m)
    original, moved = solve_optimal(costs), solve_optimal(permuted)
    assert moved.total_cost == pytest.approx(original.total_cost, abs=1e-12)
    # row k of the permuted matrix is row perm[k] of the original
    assert tuple(t if t == PPP else int(perm[t]) for t in moved.gt_to_target) == original.gt_to_target

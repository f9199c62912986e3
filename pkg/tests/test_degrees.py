"""Degree regression, threshold rounding, match plans, restructuring."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relgen.degrees import (
    DegenerateChild,
    DegreeError,
    MatchPlan,
    fit_degree_regressor,
    fit_match_plan,
    generate_pairs,
    materialize_stages,
    predict_raw_degrees,
    reconstruct_from_stages,
    restructure_multi_fk,
    round_degrees,
    select_matches,
    softmax_inverse_distance,
)


# ---------------------------------------------------------------------------
# regression with retained residuals
# ---------------------------------------------------------------------------


def test_constant_target_gives_zero_residuals():
    X = np.random.default_rng(0).normal(size=(30, 3))
    y = np.full(30, 4.0)
    model = fit_degree_regressor(X, y)
    np.testing.assert_allclose(model.predict(X), y, atol=1e-10)
    np.testing.assert_allclose(model.residual_pool, 0.0, atol=1e-10)


def test_perfectly_linear_target_residuals_below_1e8():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(50, 4))
    w = np.array([1.5, -2.0, 0.5, 3.0])
    y = X @ w + 7.0
    model = fit_degree_regressor(X, y)
    assert np.abs(model.residual_pool).max() <= 1e-8


def test_residual_pool_mean_is_zero_with_intercept():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(80, 3))
    y = rng.poisson(3.0, 80).astype(float)
    model = fit_degree_regressor(X, y)
    assert model.residual_pool.mean() == pytest.approx(0.0, abs=1e-9)
    assert len(model.residual_pool) == 80


def test_rank_deficient_design_handled():
    X = np.ones((10, 3))  # rank 1 plus intercept
    y = np.arange(10.0)
    model = fit_degree_regressor(X, y)
    assert np.isfinite(model.weights).all()


def test_predict_raw_degrees_deterministic_and_pool_bound():
    X = np.zeros((6, 1))
    model = fit_degree_regressor(np.zeros((4, 1)), np.array([1.0, 3.0, 1.0, 3.0]))
    a = predict_raw_degrees(model, X, seed=9)
    b = predict_raw_degrees(model, X, seed=9)
    np.testing.assert_array_equal(a, b)
    # point prediction 2.0, pool {-1, +1} -> outputs in {1.0, 3.0}
    assert set(np.round(a, 9)) <= {1.0, 3.0}


def test_predict_with_empty_pool_is_point_prediction():
    model = fit_degree_regressor(np.zeros((3, 1)), np.array([2.0, 2.0, 2.0]))
    model.residual_pool = np.array([])
    out = predict_raw_degrees(model, np.zeros((5, 1)), seed=0)
    np.testing.assert_allclose(out, 2.0)


# ---------------------------------------------------------------------------
# rounding
# ---------------------------------------------------------------------------


def test_round_integral_within_band_is_identity():
    out = round_degrees(np.array([2.0, 3.0]), 5, 0.1, seed=0)
    np.testing.assert_array_equal(out, [2, 3])


def test_round_threshold_half_accepted_first():
    # hand simulation: tau = 0.5 gives floor([1.7, 3.2, 0.6]) = [1, 3, 0], sum 4
    out = round_degrees(np.array([1.2, 2.7, 0.1]), 4, 0.25, seed=0)
    np.testing.assert_array_equal(out, [1, 3, 0])


def test_round_too_small_branch_increments_to_target():
    out = round_degrees(np.array([0.1, 0.1]), 4, 0.0, seed=0)
    assert out.sum() == 4
    assert (out >= 1).all()  # ceiling first, then two random increments


def test_round_too_large_branch_decrements():
    out = round_degrees(np.array([5.9, 6.9]), 4, 0.0, seed=0)
    assert out.sum() == 4
    assert (out >= 0).all()


def test_round_negative_inputs_clipped():
    out = round_degrees(np.array([-3.0, 2.0, -1.0]), 2, 0.0, seed=0)
    assert out.sum() == 2
    assert (out >= 0).all()


def test_round_infeasible_band_raises():
    with pytest.raises(DegreeError):
        round_degrees(np.array([1.0]), 4.3, 0.0, seed=0)


def test_threshold_sum_monotone_in_tau():
    rng = np.random.default_rng(3)
    d = rng.uniform(0, 5, 40)
    taus = np.linspace(0, 0.999, 50)
    sums = [int(np.floor(d + t).sum()) for t in taus]
    assert all(a <= b for a, b in zip(sums, sums[1:]))
    assert sums[0] == int(np.floor(d).sum())
    assert sums[-1] <= int(np.ceil(d).sum())


@given(st.integers(min_value=0, max_value=50_000))
@settings(max_examples=200, deadline=None)
def test_round_degrees_fuzz(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 60))
    d = rng.normal(2.0, 3.0, n)
    target = int(rng.integers(0, 120))
    eps = float(rng.uniform(0, 0.3))
    out = round_degrees(d, target, eps, seed=seed)
    assert out.dtype.kind == "i"
    assert (out >= 0).all()
    assert (1 - eps) * target <= out.sum() <= (1 + eps) * target


# ---------------------------------------------------------------------------
# two-constraint decomposition
# ---------------------------------------------------------------------------


def test_softmax_inverse_distance_example():
    p = softmax_inverse_distance(np.array([1.0, 2.0]))
    expected = np.array([math.e, math.exp(0.5)])
    expected /= expected.sum()
    np.testing.assert_allclose(p, expected, rtol=1e-12)
    assert p[0] == pytest.approx(0.6225, abs=1e-4)


def _toy_contexts(rng, n_left=12, n_right=9, width=3):
    return rng.normal(size=(n_left, width)), rng.normal(size=(n_right, width))


def test_fit_match_plan_counts_and_sizes():
    rng = np.random.default_rng(7)
    ctx_a, ctx_b = _toy_contexts(rng)
    # every left row matched to exactly one right row
    left = np.arange(12)
    right = rng.integers(0, 9, 12)
    plan = fit_match_plan(ctx_a, ctx_b, left, right)
    np.testing.assert_allclose(plan.count_model.predict(ctx_a), 1.0, atol=1e-6)
    assert plan.total_pairs == len({(a, int(b)) for a, b in zip(left, right)})
    assert plan.child_total == 12


def test_match_plan_trains_degree_model_on_nonzero_pairs_only():
    rng = np.random.default_rng(8)
    ctx_a, ctx_b = _toy_contexts(rng)
    left = np.array([0, 0, 0, 1, 5])
    right = np.array([2, 2, 3, 4, 8])
    plan = fit_match_plan(ctx_a, ctx_b, left, right)
    # distinct pairs: (0,2)x2, (0,3), (1,4), (5,8)
    assert plan.total_pairs == 4
    assert len(plan.degree_model.residual_pool) == 4


def test_fit_match_plan_empty_child_degenerate():
    rng = np.random.default_rng(9)
    ctx_a, ctx_b = _toy_contexts(rng)
    with pytest.raises(DegenerateChild):
        fit_match_plan(ctx_a, ctx_b, np.array([], dtype=int), np.array([], dtype=int))


def test_select_matches_distinct_and_counted():
    rng = np.random.default_rng(10)
    ctx_a, ctx_b = _toy_contexts(rng, n_left=6, n_right=20)
    left = np.repeat(np.arange(6), 3)
    right = rng.integers(0, 20, 18)
    plan = fit_match_plan(ctx_a, ctx_b, left, right)
    counts = np.array([0, 1, 2, 3, 4, 5])
    pairs = select_matches(plan, ctx_a, ctx_b, counts, seed=4)
    by_row = {}
    for a, b in pairs:
        by_row.setdefault(a, []).append(b)
    assert 0 not in by_row  # zero match count emits nothing
    for a, picks in by_row.items():
        assert len(picks) == counts[a]
        assert len(set(picks)) == len(picks)  # distinct partners


def test_select_matches_clamps_to_available_partners():
    rng = np.random.default_rng(11)
    ctx_a, ctx_b = _toy_contexts(rng, n_left=2, n_right=3)
    plan = fit_match_plan(ctx_a, ctx_b, np.array([0, 1]), np.array([0, 1]))
    pairs = select_matches(plan, ctx_a, ctx_b, np.array([5, 0]), seed=0)
    assert len([p for p in pairs if p[0] == 0]) == 3


def test_generate_pairs_total_within_tolerance():
    rng = np.random.default_rng(12)
    ctx_a, ctx_b = _toy_contexts(rng, n_left=15, n_right=12)
    left = rng.integers(0, 15, 60)
    right = rng.integers(0, 12, 60)
    plan = fit_match_plan(ctx_a, ctx_b, left, right)
    out = generate_pairs(plan, ctx_a, ctx_b, target_total=60, eps=0.05, seed=5)
    total = sum(d for _, _, d in out)
    assert 57 <= total <= 63
    assert all(d >= 0 for _, _, d in out)
    again = generate_pairs(plan, ctx_a, ctx_b, target_total=60, eps=0.05, seed=5)
    assert out == again  # deterministic per seed


def test_generate_pairs_k_factor_candidate_count():
    plan = MatchPlan(
        count_model=fit_degree_regressor(np.zeros((2, 1)), np.array([1.0, 1.0])),
        mapper=np.zeros((2, 1)),
        degree_model=fit_degree_regressor(np.zeros((2, 2)), np.array([1.0, 1.0])),
        total_pairs=2,
        child_total=2,
        k_factor=1.5,
    )
    assert math.ceil(plan.k_factor * 2) == 3  # m=2 -> 3 candidates


def test_k_factor_must_exceed_one():
    with pytest.raises(DegreeError):
        MatchPlan(
            count_model=fit_degree_regressor(np.zeros((1, 1)), np.array([1.0])),
            mapper=np.zeros((2, 1)),
            degree_model=fit_degree_regressor(np.zeros((1, 2)), np.array([1.0])),
            total_pairs=1,
            child_total=1,
            k_factor=1.0,
        )


# ---------------------------------------------------------------------------
# restructuring
# ---------------------------------------------------------------------------


def test_restructure_two_keys_is_identity_stage():
    stages = restructure_multi_fk(["f1", "f2"])
    assert len(stages) == 1
    assert stages[0].left == "f1" and stages[0].right == "f2"


def test_restructure_three_keys_two_stages():
    stages = restructure_multi_fk(["f1", "f2", "f3"])
    assert len(stages) == 2
    assert stages[0].left == "f1" and stages[0].right == "f2"
    assert stages[1].left == stages[0].name and stages[1].right == "f3"


def test_restructure_five_keys_four_stages():
    assert len(restructure_multi_fk([f"f{i}" for i in range(5)])) == 4


def test_stage_reconstruction_exact_on_random_instances():
    rng = np.random.default_rng(77)
    for _ in range(100):
        f = int(rng.integers(3, 6))
        n = int(rng.integers(1, 40))
        tuples = {
            tuple(int(rng.integers(0, 5)) for _ in range(f)) for _ in range(n)
        }
        stages = materialize_stages(tuples, f)
        assert len(stages) == f - 1
        assert all(len(row) == 2 for s in stages for row in s)
        assert reconstruct_from_stages(stages) == tuples

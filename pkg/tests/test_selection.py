import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairimprove.data import Constant, Dataset, LinearClassifier
from fairimprove.errors import ConfigError, DataError, Infeasible, RankDeficient
from fairimprove.milp import enumerate_linear_classifiers
from fairimprove.milpcheck import _FixedDecisions, brute_force, random_instance
from fairimprove.selection import (
    FittedScorer,
    Identity,
    LassoThreshold,
    MilpAccuracy,
    MilpFairness,
    OlsThreshold,
    build_calibration_milp,
    build_classification_milp,
    calibration_rates,
    classification_rates,
    fit_lasso,
    fit_ols,
    lambda_max,
    make_candidate,
    rule_from_mapping,
    solve_built,
)


def regression_data(n=200, p=5, seed=0, noise=1.0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    beta = np.linspace(1.0, -1.0, p)
    y = 0.5 + X @ beta + noise * rng.normal(size=n)
    g = np.r_[0, 1, rng.integers(0, 2, n - 2)]
    return Dataset.from_arrays(X, y, g)


# -- OLS --------------------------------------------------------------------


def test_ols_recovers_exact_linear_fit():
    data = regression_data(noise=0.0)
    coef = fit_ols(data).coef
    np.testing.assert_allclose(coef, np.r_[0.5, np.linspace(1.0, -1.0, 5)], atol=1e-7)


def test_ols_intercept_only_gives_mean():
    rng = np.random.default_rng(1)
    y = rng.normal(size=30)
    data = Dataset(np.ones((30, 1)), y, np.r_[0, 1, rng.integers(0, 2, 28)])
    assert fit_ols(data).coef[0] == pytest.approx(y.mean(), abs=1e-9)


def test_ols_matches_qr_solution():
    data = regression_data(seed=4)
    Q, R = np.linalg.qr(data.X)
    oracle = np.linalg.solve(R, Q.T @ data.y)
    np.testing.assert_allclose(fit_ols(data).coef, oracle, atol=1e-7)


def test_ols_needs_more_rows_than_columns():
    data = regression_data(n=4, p=4)
    with pytest.raises(RankDeficient):
        fit_ols(data)


# -- lasso ------------------------------------------------------------------


def test_lasso_without_penalty_matches_ols():
    data = regression_data(seed=2)
    lasso = fit_lasso(data, lambdas=[0.0])
    np.testing.assert_allclose(lasso.coef, fit_ols(data).coef, atol=1e-5)


def test_lasso_above_lambda_max_is_intercept_only():
    data = regression_data(seed=3)
    top = lambda_max(data.X, data.y)
    coef = fit_lasso(data, lambdas=[1.01 * top]).coef
    np.testing.assert_array_equal(coef[1:], 0.0)
    assert coef[0] == pytest.approx(data.y.mean())


def test_lasso_orthogonal_design_soft_thresholds():
    # With orthonormal standardized columns the solution is S(z'y/n, lambda).
    n = 8
    H = np.array([[1, 1, 1, 1, 1, 1, 1, 1],
                  [1, -1, 1, -1, 1, -1, 1, -1],
                  [1, 1, -1, -1, 1, 1, -1, -1]], dtype=float).T
    X = H[:, 1:]
    y = np.array([3.0, 1.0, 2.0, -1.0, 0.5, 0.0, 1.5, 2.5])
    data = Dataset.from_arrays(X, y, [0, 1] * 4)
    lam = 0.3
    z = X.T @ (y - y.mean()) / n
    expected = np.sign(z) * np.maximum(np.abs(z) - lam, 0.0)
    np.testing.assert_allclose(fit_lasso(data, lambdas=[lam]).coef[1:], expected, atol=1e-6)


def test_lasso_cv_is_deterministic_and_picks_a_grid_value():
    data = regression_data(seed=5)
    a = fit_lasso(data, seed=9)
    b = fit_lasso(data, seed=9)
    np.testing.assert_array_equal(a.coef, b.coef)
    assert 0.0 < a.penalty <= lambda_max(data.X, data.y)


# -- thresholding -----------------------------------------------------------


def test_make_candidate_selects_top_share():
    n = 100
    data = Dataset.from_arrays(np.arange(1.0, n + 1), np.zeros(n), np.tile([0, 1], 50))
    scorer = FittedScorer(np.array([0.0, 1.0]), "ols")
    cand = make_candidate(scorer, data, 0.03)
    assert cand.threshold == 97.0
    np.testing.assert_array_equal(np.flatnonzero(cand.decide(data)), [97, 98, 99])
    assert not cand.degenerate


def test_constant_scores_are_degenerate():
    data = Dataset.from_arrays(np.zeros((10, 1)), np.zeros(10), [0, 1] * 5)
    cand = make_candidate(FittedScorer(np.array([1.0, 0.0]), "ols"), data, 0.1)
    assert cand.degenerate
    assert cand.decide(data).sum() == 0


# -- MILP formulations ------------------------------------------------------


def classification_case(seed):
    return random_instance(seed, 0, calibration=False)


@pytest.mark.parametrize("seed", range(6))
def test_fairness_milp_matches_enumeration(seed):
    data, a0 = classification_case(seed)
    built = build_classification_milp(data, a0)
    oracle = brute_force(data, a0, "fair")
    try:
        beta, D, sol = solve_built(built)
    except Infeasible:
        assert math.isnan(oracle)
        return
    assert sol.objective == pytest.approx(oracle, abs=1e-6)
    # The extracted classifier reproduces the MILP decisions.
    np.testing.assert_array_equal((built.Z @ beta >= 0).astype(np.int8), D)
    U = classification_rates(data.y, data.groups, D)
    base = built.index["base"]
    assert U[0] >= base[0] + 1e-4 - 1e-9 and U[1] >= base[1] + 1e-4 - 1e-9


@pytest.mark.parametrize("target", [0, 1])
def test_accuracy_milp_matches_enumeration(target):
    for seed in range(4):
        data, a0 = classification_case(100 + seed)
        built = build_classification_milp(data, a0, kind="acc", target=target)
        oracle = brute_force(data, a0, "acc-r" if target == 0 else "acc-b")
        try:
            _, _, sol = solve_built(built)
        except Infeasible:
            assert math.isnan(oracle)
            continue
        assert sol.objective == pytest.approx(oracle, abs=1e-6)


def test_extracted_rule_decides_like_milp_on_original_scale():
    data, a0 = classification_case(1)
    rule = MilpFairness()
    cand = rule.select(data, a0)
    built = rule.build(data, a0)
    _, D, _ = solve_built(built)
    np.testing.assert_array_equal(cand.decide(data), D)


def test_infeasible_when_status_quo_is_perfect():
    # a0 already classifies every row correctly; no rule can beat it.
    X = np.array([-2.0, -1.0, 1.0, 2.0, -1.5, 1.5])
    y = (X > 0).astype(float)
    data = Dataset.from_arrays(X, y, [0, 1, 0, 1, 0, 1])
    a0 = LinearClassifier([0.0, 1.0])
    with pytest.raises(Infeasible):
        solve_built(build_classification_milp(data, a0))


def test_classification_milp_needs_binary_outcome():
    data = regression_data(n=10, p=1)
    with pytest.raises(DataError):
        build_classification_milp(data, Constant(1))


@pytest.mark.parametrize("seed", range(8))
def test_calibration_milp_matches_enumeration_and_linearization(seed):
    data, a0 = random_instance(seed, 0, calibration=True)
    built = build_calibration_milp(data, a0, kappa=0.25)
    oracle = brute_force(data, a0, "calibration")
    try:
        _, D, sol = solve_built(built)
    except Infeasible:
        assert math.isnan(oracle)
        return
    assert sol.objective == pytest.approx(oracle, abs=1e-6)
    m = data.n
    for s_key, t_key, g in (("s1", "t1", 1), ("s0", "t0", 0)):
        s = sol.x[built.index[s_key]]
        t = sol.x[built.index[t_key]]
        np.testing.assert_allclose(s, t * D, atol=1e-9)
        assert t >= 1.0 / m
        assert t == pytest.approx(1.0 / np.sum(D[data.groups == g]), abs=1e-9)
    U = calibration_rates(data.y, data.groups, D)
    np.testing.assert_allclose(sol.x[built.index["U"]], U, atol=1e-9)


def test_calibration_capacity_too_small():
    data, a0 = random_instance(0, 0, calibration=True)
    with pytest.raises(Infeasible):
        build_calibration_milp(data, a0, kappa=0.1)


def test_calibration_status_quo_must_select_both_groups():
    data, _ = random_instance(0, 0, calibration=True)
    a0 = _FixedDecisions(np.where(data.groups == 0, 1, 0).astype(np.int8))
    with pytest.raises(Infeasible):
        build_calibration_milp(data, a0, kappa=0.25)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_milp_optimum_is_realizable(seed):
    data, a0 = classification_case(seed)
    built = build_classification_milp(data, a0)
    try:
        _, D, sol = solve_built(built)
    except Infeasible:
        return
    labelings = {tuple(v) for v in enumerate_linear_classifiers(built.Z)}
    assert tuple(D) in labelings
    assert built.model.max_violation(sol.x, integrality=True) <= 1e-7


# -- rules and config -------------------------------------------------------


def test_rule_from_mapping():
    assert rule_from_mapping({"rule": "ols", "kappa": 0.1}) == OlsThreshold(0.1)
    assert rule_from_mapping({"rule": "identity"}) == Identity()
    lasso = rule_from_mapping({"rule": "lasso", "folds": 3})
    assert isinstance(lasso, LassoThreshold) and lasso.folds == 3
    acc = rule_from_mapping({"rule": "milp-acc", "target": "b"})
    assert isinstance(acc, MilpAccuracy) and acc.target == 1
    assert rule_from_mapping(acc.to_mapping()) == acc
    for bad in ({"rule": "nope"}, {"rule": "ols", "kappa": 1.5}, {"rule": "ols", "bogus": 1},
                {"rule": "milp-acc", "target": "x"}):
        with pytest.raises(ConfigError):
            rule_from_mapping(bad)


def test_identity_returns_status_quo():
    a0 = Constant(1)
    assert Identity().select(regression_data(n=10), a0) is a0


def test_ols_threshold_rule_selects_kappa_share():
    data = regression_data(n=500, seed=8)
    cand = OlsThreshold(0.1).select(data, Constant(0))
    assert cand.decide(data).sum() == 50

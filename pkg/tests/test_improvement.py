import math
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairimprove import kernels
from fairimprove.data import Constant, Dataset, LinearClassifier
from fairimprove.errors import ConfigError, EmptyCache
from fairimprove.improvement import (
    BootstrapCache,
    DeltaTriple,
    bootstrap_from_columns,
    component_pvalues,
    compute_statistics,
    draw_bootstrap,
    lower_tail_test,
    replicate_indices,
    resample_column_means,
    run_single_split,
    upper_tail_test,
)
from fairimprove.utility import (
    Calibration,
    ClassificationRate,
    UtilityEstimates,
    UtilitySpec,
    estimate_utilities,
    point_estimates,
    utility_columns,
)


def estimates(A, F=None):
    A = np.asarray(A, dtype=np.float64)
    return UtilityEstimates(A, A if F is None else np.asarray(F, dtype=np.float64))


def cache_from(A, F, ell=100, seed=0):
    return BootstrapCache(np.asarray(A, dtype=np.float64), np.asarray(F, dtype=np.float64), ell, seed)


def binary_data(n=400, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 2))
    g = np.r_[0, 1, (rng.random(n - 2) < 0.4).astype(int)]
    y = (x[:, 0] + 0.5 * g + rng.normal(size=n) > 0).astype(float)
    return Dataset.from_arrays(x, y, g)


# -- statistics -------------------------------------------------------------


def test_identical_rules_give_zero_statistics():
    est = estimates([[0.7, 0.6], [0.7, 0.6]])
    s = compute_statistics(est, DeltaTriple(), 50)
    assert (s.t_r, s.t_b, s.t_f) == (0.0, 0.0, 0.0)


def test_accuracy_statistic_arithmetic():
    est = estimates([[6.33, 1.0], [7.44, 1.0]])
    assert compute_statistics(est, DeltaTriple(), 10).t_r == pytest.approx(1.11, abs=1e-12)


def test_fairness_statistic_arithmetic():
    # F pairs (1r, 1b, 0r, 0b) = (0.09, 0.00, 1.19, 0.00)
    est = estimates(np.ones((2, 2)), [[1.19, 0.00], [0.09, 0.00]])
    assert compute_statistics(est, DeltaTriple(), 10).t_f == pytest.approx(-1.10, abs=1e-12)


def test_margins_enter_as_factors():
    est = estimates([[2.0, 4.0], [3.0, 5.0]], [[1.0, 3.0], [2.0, 2.5]])
    s = compute_statistics(est, DeltaTriple(0.1, -0.2, 0.5), 10)
    assert s.t_r == pytest.approx(3.0 - 1.1 * 2.0)
    assert s.t_b == pytest.approx(5.0 - 0.8 * 4.0)
    assert s.t_f == pytest.approx(0.5 - 0.5 * 2.0)


def test_delta_f_above_one_rejected():
    with pytest.raises(ConfigError):
        DeltaTriple(0, 0, 1.5)
    DeltaTriple(-0.5, -0.5, 1.0)


# -- bootstrap --------------------------------------------------------------


def test_single_replicate_is_deterministic():
    data = binary_data()
    spec = UtilitySpec(ClassificationRate())
    a1 = LinearClassifier([0.0, 1.0, 0.0])
    one = draw_bootstrap(data, Constant(1), a1, spec, 1, seed=5)
    two = draw_bootstrap(data, Constant(1), a1, spec, 1, seed=5)
    assert one.Q == 1
    assert one.A.tobytes() == two.A.tobytes()


def test_constant_sample_has_degenerate_bootstrap():
    n = 30
    data = Dataset.from_arrays(np.zeros((n, 1)), np.ones(n), np.r_[np.zeros(15), np.ones(15)])
    M, layout = utility_columns(data, np.ones(n), np.ones(n), UtilitySpec(Calibration()))
    # Rows differ only by group, so resample only group shares; utilities stay exact.
    cache = bootstrap_from_columns(M, layout, 200, 3)
    _, est = point_estimates(M.mean(axis=0), layout)
    finite = ~np.isnan(cache.A).any(axis=(1, 2))
    np.testing.assert_allclose(cache.A[finite], np.broadcast_to(est.A, cache.A[finite].shape))


def test_bootstrap_sd_of_normal_mean():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((400, 1))
    means = resample_column_means(x, 2000, seed=9)
    dev = math.sqrt(400) * (means[:, 0] - x.mean())
    assert abs(dev.std() / x.std() - 1.0) < 0.1
    assert abs(dev.std() - 1.0) < 0.1


def test_replicates_depend_only_on_seed_and_index():
    rng = np.random.default_rng(2)
    M = rng.normal(size=(37, 3))
    full = resample_column_means(M, 200, seed=4)
    short = resample_column_means(M, 70, seed=4)
    np.testing.assert_array_equal(full[:70], short)
    for q in (0, 63, 64, 199):
        np.testing.assert_allclose(full[q], M[replicate_indices(4, 37, q)].mean(axis=0), rtol=1e-12)


def test_kernel_backends_agree():
    rng = np.random.default_rng(3)
    values = rng.normal(size=(50, 8))
    idx = rng.integers(0, 50, size=(40, 50))
    np.testing.assert_allclose(kernels.resample_sums_numpy(values, idx), kernels.resample_sums_numba(values, idx),
                               rtol=1e-12, atol=1e-12)
    X = rng.normal(size=(200, 6))
    y = X[:, 0] - X[:, 1] + rng.normal(size=200)
    X = (X - X.mean(0)) / X.std(0)
    gram, xty = X.T @ X / 200, X.T @ (y - y.mean()) / 200
    for lam in (0.0, 0.05, 0.5):
        b1, s1 = kernels.lasso_cd_numpy(gram, xty, lam, np.zeros(6), 1e-10, 10_000)
        b2, s2 = kernels.lasso_cd_numba(gram, xty, lam, np.zeros(6), 1e-10, 10_000)
        np.testing.assert_allclose(b1, b2, atol=1e-12)
        assert s1 == s2


def test_numpy_fallback_flag():
    code = (
        "from fairimprove import _accel, kernels;"
        "print(_accel.backend(), kernels.resample_sums is kernels.resample_sums_numpy)"
    )
    env = dict(os.environ, FAIRIMPROVE_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["numpy", "True"]


# -- component tests --------------------------------------------------------


def test_all_replicates_below_point_gives_zero_p():
    Q = 50
    A = np.tile([[1.0, 1.0], [2.0, 2.0]], (Q, 1, 1))
    F = np.tile([[1.0, 0.0], [0.0, 0.0]], (Q, 1, 1))
    out = component_pvalues(cache_from(A, F), estimates([[1.0, 1.0], [2.0, 2.0]], [[1.0, 0.0], [0.0, 0.0]]),
                            DeltaTriple())
    assert (out.p_r, out.p_b) == (0.0, 0.0)
    assert out.reject_r and out.reject_b


def test_combined_p_is_largest_component():
    # Accuracy components p = 0; exactly one of 10000 fairness replicates is at or below the point.
    Q = 10_000
    A_pt = np.array([[1.0, 1.0], [2.0, 2.0]])
    F_pt = np.array([[1.0, 0.0], [0.0, 0.0]])
    A = np.tile(A_pt, (Q, 1, 1))
    F = np.tile(F_pt, (Q, 1, 1))
    F[17, 0] = [3.0, 0.0]
    out = component_pvalues(cache_from(A, F), estimates(A_pt, F_pt), DeltaTriple())
    assert (out.p_r, out.p_b, out.p_f) == (0.0, 0.0, 0.0001)
    assert out.p == 0.0001
    assert out.reject


def test_identical_candidate_never_rejects():
    data = binary_data()
    a0 = LinearClassifier([0.2, 1.0, 0.0])
    out = run_single_split(data, a0, a0, UtilitySpec(ClassificationRate()), Q=300, seed=1)
    assert (out.stats.t_r, out.stats.t_b, out.stats.t_f) == (0.0, 0.0, 0.0)
    assert not out.reject
    assert out.p == 1.0


def test_degenerate_replicates_count_against_rejection():
    Q = 20
    A_pt = np.array([[1.0, 1.0], [2.0, 2.0]])
    F_pt = np.array([[1.0, 0.0], [0.0, 0.0]])
    A = np.tile(A_pt, (Q, 1, 1))
    F = np.tile(F_pt, (Q, 1, 1))
    A[:3, 1, 0] = np.nan
    F[:3, 1, 0] = np.nan
    out = component_pvalues(cache_from(A, F), estimates(A_pt, F_pt), DeltaTriple())
    assert out.p_r == pytest.approx(3 / 20)
    assert out.p_b == 0.0
    assert out.p_f == pytest.approx(3 / 20)


def test_empty_cache_rejected():
    with pytest.raises(EmptyCache):
        component_pvalues(cache_from(np.zeros((0, 2, 2)), np.zeros((0, 2, 2))), estimates(np.ones((2, 2))),
                          DeltaTriple())


def random_outcomes(seed):
    rng = np.random.default_rng(seed)
    Q = int(rng.integers(1, 60))
    A_pt = rng.uniform(0.2, 1.0, (2, 2))
    F_pt = rng.uniform(0.0, 1.0, (2, 2))
    A = A_pt * rng.uniform(0.6, 1.4, (Q, 2, 2))
    F = F_pt + rng.normal(0, 0.1, (Q, 2, 2))
    delta = DeltaTriple(*rng.uniform(-0.3, 0.3, 2), rng.uniform(-0.5, 1.0))
    alpha = float(rng.uniform(0.01, 0.3))
    return component_pvalues(cache_from(A, F, ell=int(rng.integers(2, 500))), estimates(A_pt, F_pt), delta, alpha)


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_intersection_union_identity(seed):
    out = random_outcomes(seed)
    assert out.p == max(out.p_r, out.p_b, out.p_f)
    assert out.reject == (out.reject_r and out.reject_b and out.reject_f)


def test_quantile_pvalue_duality_exhaustive():
    # Every Q <= 20, every x on a grid covering ties and gaps, several levels.
    rng = np.random.default_rng(0)
    for Q in range(1, 21):
        for _ in range(10):
            dev = np.round(rng.normal(size=Q), 1)
            grid = np.unique(np.concatenate([dev, dev + 0.05, dev - 0.05, [-9.0, 9.0]]))
            for alpha in (0.01, 0.05, 0.1, 0.25, 0.5):
                for x in grid:
                    tie = bool(np.any(dev == x))
                    p, rej = upper_tail_test(dev, x, alpha)
                    if rej:
                        assert p <= alpha
                    if not tie:
                        assert rej == (p <= alpha)
                    p, rej = lower_tail_test(dev, x, alpha)
                    assert rej == (p < alpha) or tie
                    if rej:
                        assert p < alpha


def test_critical_value_rule_matches_sorted_replicates():
    dev = np.arange(1.0, 21.0)  # 20 replicates
    # (1 - 0.05) quantile is the 19th order statistic.
    assert upper_tail_test(dev, 19.0, 0.05) == (pytest.approx(0.05), False)
    assert upper_tail_test(dev, 19.5, 0.05) == (pytest.approx(0.05), True)
    # 0.05 quantile is the 1st order statistic.
    assert lower_tail_test(dev, 0.5, 0.05) == (0.0, True)
    assert lower_tail_test(dev, 1.0, 0.05) == (pytest.approx(0.05), False)


def monotone_case(seed):
    """Cache whose replicates stay within a factor of 2 of the point estimates."""
    rng = np.random.default_rng(seed)
    Q = int(rng.integers(5, 80))
    A_pt = rng.uniform(0.2, 1.0, (2, 2))
    F_pt = rng.uniform(0.0, 1.0, (2, 2))
    gap0 = abs(F_pt[0, 0] - F_pt[0, 1])
    A = A_pt * rng.uniform(0.55, 1.45, (Q, 2, 2))
    F = F_pt + rng.uniform(-gap0 / 4, gap0 / 4, (Q, 2, 2))
    return cache_from(A, F, ell=int(rng.integers(2, 500))), estimates(A_pt, F_pt)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0, 1, 2]), st.floats(-0.5, 0.5), st.floats(0.0, 0.5))
def test_p_value_nondecreasing_in_each_margin(seed, which, base, step):
    cache, est = monotone_case(seed)
    lo = [0.0, 0.0, 0.0]
    lo[which] = base
    hi = list(lo)
    hi[which] = min(1.0, base + step)
    p_lo = component_pvalues(cache, est, DeltaTriple(*lo))
    p_hi = component_pvalues(cache, est, DeltaTriple(*hi))
    assert p_hi.p >= p_lo.p
    assert p_hi.p_r >= p_lo.p_r and p_hi.p_b >= p_lo.p_b and p_hi.p_f >= p_lo.p_f


def test_recombination_equals_fresh_bootstrap():
    data = binary_data(300, seed=4)
    spec = UtilitySpec(ClassificationRate())
    a0, a1 = LinearClassifier([0.3, 1.0, 0.0]), LinearClassifier([0.0, 1.0, 0.5])
    cache = draw_bootstrap(data, a0, a1, spec, 400, seed=12)
    est = estimate_utilities(data, a0, a1, spec)
    rng = np.random.default_rng(5)
    for _ in range(10):
        delta = DeltaTriple(*rng.uniform(-0.2, 0.2, 2), rng.uniform(-0.5, 1.0))
        cached = component_pvalues(cache, est, delta)
        fresh = run_single_split(data, a0, a1, spec, delta, Q=400, seed=12)
        assert (cached.p_r, cached.p_b, cached.p_f, cached.p) == (fresh.p_r, fresh.p_b, fresh.p_f, fresh.p)
        assert cached.reject == fresh.reject


def test_single_split_size_under_exchangeable_null():
    # Status quo and candidate are independent coin flips of the same bias, so
    # every group utility and the unfairness coincide in the population.
    reps, n, alpha = 300, 400, 0.05
    rejections = 0
    spec = UtilitySpec(ClassificationRate())
    for rep in range(reps):
        rng = np.random.default_rng([77, rep])
        g = np.r_[0, 1, (rng.random(n - 2) < 0.3).astype(int)]
        y = (rng.random(n) < np.where(g == 1, 0.3, 0.6)).astype(float)
        d0 = (rng.random(n) < 0.5).astype(np.int8)
        d1 = (rng.random(n) < 0.5).astype(np.int8)
        data = Dataset.from_arrays(np.zeros((n, 1)), y, g)
        M, layout = utility_columns(data, d0, d1, spec)
        _, est = point_estimates(M.mean(axis=0), layout)
        out = component_pvalues(bootstrap_from_columns(M, layout, 200, rep), est, DeltaTriple(), alpha)
        rejections += out.reject
    rate = rejections / reps
    assert rate <= alpha + 2 * math.sqrt(alpha * (1 - alpha) / reps)

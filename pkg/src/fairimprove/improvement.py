"""Single-split test of whether a candidate improves on the status quo.

Three one-sided component tests (accuracy for each group, fairness) are
calibrated with the nonparametric bootstrap of the test sample and combined
with the intersection-union rule: reject only if all three reject, and report
the largest of the three p-values.

The bootstrap replicates are cached as raw utility estimates so statistics
for any improvement margin can be recombined without resampling again.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._seeding import derive_rng
from .errors import ConfigError, EmptyCache
from .kernels import resample_sums
from .utility import (
    UtilityEstimates,
    point_estimates,
    ratios_from_means,
    utility_columns,
)

# Replicates are generated in fixed blocks; block j uses its own stream
# derived from (seed, j), so replicate q depends only on (seed, q).
BLOCK = 64

# Slack when turning a probability level into an order-statistic rank.
_RANK_EPS = 1e-9


@dataclass(frozen=True)
class DeltaTriple:
    """Required improvement margins for group r accuracy, group b accuracy and unfairness."""

    delta_r: float = 0.0
    delta_b: float = 0.0
    delta_f: float = 0.0

    def __post_init__(self):
        for v in (self.delta_r, self.delta_b, self.delta_f):
            if not math.isfinite(v):
                raise ConfigError("improvement margins must be finite")
        if self.delta_f > 1:
            raise ConfigError("delta_f must not exceed 1")


@dataclass(frozen=True)
class ComponentStatistics:
    t_r: float
    t_b: float
    t_f: float
    ell: int

    def as_array(self):
        return np.array([self.t_r, self.t_b, self.t_f])


@dataclass(frozen=True, eq=False)
class BootstrapCache:
    """Bootstrap replicates of the utility estimates for one test sample.

    ``A`` and ``F`` have shape (Q, 2, 2); replicates whose normalization
    vanished hold NaN in the affected cells.
    """

    A: np.ndarray
    F: np.ndarray
    ell: int
    seed: int

    @property
    def Q(self):
        return self.A.shape[0]


@dataclass(frozen=True)
class TestOutcome:
    p_r: float
    p_b: float
    p_f: float
    p: float
    reject_r: bool
    reject_b: bool
    reject_f: bool
    reject: bool
    alpha: float
    stats: ComponentStatistics
    estimates: UtilityEstimates
    delta: DeltaTriple

    __test__ = False  # not a pytest class


def _statistics(A, F, delta):
    """Statistics over any leading axes of (..., 2, 2) estimate arrays."""
    t_r = A[..., 1, 0] - (1.0 + delta.delta_r) * A[..., 0, 0]
    t_b = A[..., 1, 1] - (1.0 + delta.delta_b) * A[..., 0, 1]
    t_f = np.abs(F[..., 1, 0] - F[..., 1, 1]) - (1.0 - delta.delta_f) * np.abs(F[..., 0, 0] - F[..., 0, 1])
    return t_r, t_b, t_f


def compute_statistics(est, delta, ell):
    """Point statistics; positive accuracy and negative fairness values favour the candidate."""
    t_r, t_b, t_f = _statistics(est.A, est.F, delta)
    return ComponentStatistics(float(t_r), float(t_b), float(t_f), int(ell))


def replicate_indices(seed, ell, q):
    """Resampling indices of replicate ``q`` (recomputed from its block stream)."""
    block, row = divmod(q, BLOCK)
    return derive_rng(seed, block).integers(0, ell, size=(BLOCK, ell))[row]


def resample_column_means(M, Q, seed):
    """Means of the columns of ``M`` over ``Q`` bootstrap resamples of its rows."""
    ell = M.shape[0]
    out = np.empty((Q, M.shape[1]))
    for block in range(0, (Q + BLOCK - 1) // BLOCK):
        idx = derive_rng(seed, block).integers(0, ell, size=(BLOCK, ell))
        lo = block * BLOCK
        hi = min(Q, lo + BLOCK)
        out[lo:hi] = resample_sums(M, idx[: hi - lo])
    return out / ell


def draw_bootstrap(test, a0, a1, spec, Q, seed):
    """Resample the test sample ``Q`` times and cache the utility replicates."""
    if Q < 1:
        raise ConfigError("bootstrap draw count must be at least 1")
    M, layout = utility_columns(test, a0.decide(test), a1.decide(test), spec)
    return bootstrap_from_columns(M, layout, Q, seed)


def bootstrap_from_columns(M, layout, Q, seed):
    means = resample_column_means(M, Q, seed)
    _, _, A, F = ratios_from_means(means, layout)
    return BootstrapCache(A, F, M.shape[0], int(seed))


def _rank(level, Q):
    """1-based rank of the empirical ``level``-quantile, inf{x : Psi(x) >= level}."""
    return min(Q, max(1, math.ceil(level * Q - _RANK_EPS)))


def bootstrap_deviations(cache, point, delta):
    """Scaled bootstrap deviations sqrt(ell) (T* - T) for r, b and f, each of shape (Q,).

    Degenerate replicates get the value least favourable to rejection:
    +inf for the accuracy components, -inf for fairness.
    """
    root = math.sqrt(cache.ell)
    t_r, t_b, t_f = _statistics(cache.A, cache.F, delta)
    dev = []
    for stars, t, bad in ((t_r, point.t_r, np.inf), (t_b, point.t_b, np.inf), (t_f, point.t_f, -np.inf)):
        s = root * (stars - t)
        dev.append(np.where(np.isnan(s), bad, s))
    return dev


def upper_tail_test(dev, x, alpha):
    """p = 1 - Psi(x); reject when x exceeds the (1 - alpha) quantile of ``dev``."""
    Q = dev.shape[0]
    # Counting dev > x equals 1 - Psi(x) without the rounding of the subtraction.
    p = np.count_nonzero(dev > x) / Q
    return float(p), bool(x > np.sort(dev)[_rank(1.0 - alpha, Q) - 1])


def lower_tail_test(dev, x, alpha):
    """p = Psi(x); reject when x is below the alpha quantile of ``dev``."""
    Q = dev.shape[0]
    p = np.count_nonzero(dev <= x) / Q
    return float(p), bool(x < np.sort(dev)[_rank(alpha, Q) - 1])


def component_pvalues(cache, estimates, delta, alpha=0.05):
    """Component and combined p-values plus rejection decisions at level ``alpha``.

    Accuracy components reject when ``sqrt(ell) t`` exceeds the (1 - alpha)
    bootstrap quantile, with p-value ``1 - Psi(sqrt(ell) t)``; the fairness
    component rejects when ``sqrt(ell) t_f`` is below the alpha quantile,
    with p-value ``Psi(sqrt(ell) t_f)``. ``Psi`` is the empirical CDF with
    weak inequality over the Q replicates.
    """
    if cache is None or cache.Q < 1:
        raise EmptyCache("bootstrap cache holds no replicates")
    if not 0.0 < alpha < 1.0:
        raise ConfigError("alpha must lie in (0, 1)")
    stats = compute_statistics(estimates, delta, cache.ell)
    root = math.sqrt(cache.ell)
    dev_r, dev_b, dev_f = bootstrap_deviations(cache, stats, delta)
    p_r, reject_r = upper_tail_test(dev_r, root * stats.t_r, alpha)
    p_b, reject_b = upper_tail_test(dev_b, root * stats.t_b, alpha)
    p_f, reject_f = lower_tail_test(dev_f, root * stats.t_f, alpha)
    return TestOutcome(
        p_r=float(p_r), p_b=float(p_b), p_f=float(p_f), p=float(max(p_r, p_b, p_f)),
        reject_r=reject_r, reject_b=reject_b, reject_f=reject_f,
        reject=reject_r and reject_b and reject_f,
        alpha=alpha, stats=stats, estimates=estimates, delta=delta,
    )


def run_single_split(test, a0, a1, spec, delta=DeltaTriple(), Q=10_000, seed=0, alpha=0.05):
    """Point estimates, bootstrap and component tests on one test sample."""
    M, layout = utility_columns(test, a0.decide(test), a1.decide(test), spec)
    _, est = point_estimates(M.mean(axis=0), layout)
    cache = bootstrap_from_columns(M, layout, Q, seed)
    return component_pvalues(cache, est, delta, alpha)

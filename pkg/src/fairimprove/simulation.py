"""Monte Carlo studies and a synthetic data generator.

* :func:`run_power_curve` -- rejection rates of the bootstrap fairness test
  when the status quo and candidate group-discrepancy terms are bivariate
  normal.
* :func:`run_game` -- how often an analyst who reruns a testing procedure
  ``m`` times can obtain a rejection under the null, for a single split at
  level alpha versus the median of K splits at alpha / 2.
* :func:`verify_bounds` -- closed-form Hoeffding bound behind the K-split
  procedure's robustness to reruns.
* :func:`gen_synthetic` -- a health-program style dataset whose embedded
  status-quo score ranks one group by a cost proxy unrelated to need.

Every Monte Carlo replicate draws from its own stream derived from
``(seed, cell, replicate)`` so results do not depend on scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._parallel import pool_map
from ._seeding import derive_rng
from .data import ColumnThreshold, Dataset
from .errors import ConfigError
from .improvement import lower_tail_test, resample_column_means

POWER_MEAN0 = 1.52
POWER_COV = ((10.0, 6.85), (6.85, 10.83))
ETA_RANGE = (0.0, 1.75)


# -- power curve ------------------------------------------------------------


@dataclass(frozen=True)
class PowerSimConfig:
    etas: tuple = (0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.52)
    ells: tuple = (100,)
    mean0: float = POWER_MEAN0
    cov: tuple = POWER_COV
    reps: int = 2000
    Q: int = 500
    alpha: float = 0.05
    seed: int = 0

    def __post_init__(self):
        cov = np.asarray(self.cov, dtype=np.float64)
        if cov.shape != (2, 2) or not np.allclose(cov, cov.T):
            raise ConfigError("covariance must be a symmetric 2x2 matrix")
        if np.linalg.eigvalsh(cov).min() <= 0:
            raise ConfigError("covariance must be positive definite")
        lo, hi = ETA_RANGE
        if not self.etas or any(not lo <= e <= hi for e in self.etas):
            raise ConfigError(f"eta values must lie in [{lo}, {hi}]")
        if not self.ells or any(int(v) < 2 for v in self.ells):
            raise ConfigError("sample sizes must be at least 2")
        if self.reps < 1 or self.Q < 1:
            raise ConfigError("reps and Q must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie in (0, 1)")

    def to_mapping(self):
        return {
            "etas": [float(e) for e in self.etas], "ells": [int(v) for v in self.ells],
            "mean0": self.mean0, "cov": [list(map(float, r)) for r in self.cov],
            "reps": self.reps, "Q": self.Q, "alpha": self.alpha, "seed": self.seed,
        }


@dataclass(frozen=True)
class PowerRow:
    eta: float
    ell: int
    reps: int
    rejections: int

    @property
    def rate(self):
        return self.rejections / self.reps

    @property
    def mc_se(self):
        return math.sqrt(self.rate * (1.0 - self.rate) / self.reps)


def fairness_rep(seed, key, eta, ell, mean0, chol, Q, alpha):
    """One replicate: draw the pairs, bootstrap, and apply the fairness test."""
    rng = derive_rng(seed, *key)
    G = rng.standard_normal((ell, 2)) @ chol.T + np.array([mean0, eta])
    boot_seed = int(rng.integers(0, 2**63 - 1))
    mean = G.mean(axis=0)
    t = abs(mean[1]) - abs(mean[0])
    star = resample_column_means(G, Q, boot_seed)
    t_star = np.abs(star[:, 1]) - np.abs(star[:, 0])
    root = math.sqrt(ell)
    _, reject = lower_tail_test(root * (t_star - t), root * t, alpha)
    return reject


def run_power_curve(cfg=PowerSimConfig(), threads=1):
    """Rejection frequency of the fairness test at each (eta, ell) cell."""
    chol = np.linalg.cholesky(np.asarray(cfg.cov, dtype=np.float64))
    cells = [(i, float(eta), int(ell)) for i, eta in enumerate(cfg.etas) for ell in cfg.ells]

    def task(item):
        i, eta, ell = item
        return sum(
            fairness_rep(cfg.seed, (i, ell, r), eta, ell, cfg.mean0, chol, cfg.Q, cfg.alpha)
            for r in range(cfg.reps)
        )

    counts = pool_map(task, cells, threads)
    return [PowerRow(eta, ell, cfg.reps, int(c)) for (_, eta, ell), c in zip(cells, counts)]


def power_csv(rows):
    lines = ["eta,ell,reps,rejections,rate,mc_se"]
    for r in rows:
        lines.append(f"{r.eta!r},{r.ell},{r.reps},{r.rejections},{r.rate:.6f},{r.mc_se:.6f}")
    return "\n".join(lines) + "\n"


# -- manipulation game ------------------------------------------------------


@dataclass(frozen=True)
class GameSimConfig:
    """Settings for the rerun game.

    ``model`` is ``"iid"`` (independent splits), ``"beta"`` (splits
    conditionally independent given a Beta-distributed rejection
    probability with the test's size as its mean and ``concentration`` as
    a + b), or ``"two-point"`` (all splits in a world reject together).
    Costs are linear (``gamma * m`` for a single split, ``gamma * K * m``
    for the K-split procedure) unless ``cost1``/``cost2`` tabulate c(1..max_m).
    """

    alpha: float = 0.05
    K: int = 7
    gamma: float = 0.005
    cost1: tuple | None = None
    cost2: tuple | None = None
    model: str = "iid"
    concentration: float = 20.0
    max_m: int = 20
    reps: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.K < 1 or self.max_m < 1 or self.reps < 1:
            raise ConfigError("K, max_m and reps must be positive")
        if self.model not in ("iid", "beta", "two-point"):
            raise ConfigError("model must be 'iid', 'beta' or 'two-point'")
        if self.concentration <= 0:
            raise ConfigError("concentration must be positive")
        for name in ("cost1", "cost2"):
            _check_costs(self.costs(name), name)

    def costs(self, which):
        table = getattr(self, which)
        if table is not None:
            if len(table) != self.max_m:
                raise ConfigError(f"{which} must list costs for m = 1..{self.max_m}")
            return np.asarray(table, dtype=np.float64)
        m = np.arange(1, self.max_m + 1, dtype=np.float64)
        return self.gamma * m * (1 if which == "cost1" else self.K)

    def to_mapping(self):
        out = {"alpha": self.alpha, "K": self.K, "gamma": self.gamma, "model": self.model,
               "concentration": self.concentration, "max_m": self.max_m, "reps": self.reps,
               "seed": self.seed}
        if self.cost1 is not None:
            out["cost1"] = [float(c) for c in self.cost1]
        if self.cost2 is not None:
            out["cost2"] = [float(c) for c in self.cost2]
        return out


def _check_costs(c, name):
    diff = np.diff(c)
    if np.any(diff <= 0):
        raise ConfigError(f"{name} must be increasing")
    if np.any(np.diff(diff) < -1e-12):
        raise ConfigError(f"{name} must be weakly convex")


@dataclass(frozen=True)
class GameResult:
    v1: np.ndarray
    v2: np.ndarray
    se1: np.ndarray
    se2: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    m1: int
    m2: int

    @property
    def u1(self):
        return 1.0 - self.v1[self.m1 - 1]

    @property
    def u2(self):
        return 1.0 - self.v2[self.m2 - 1]

    @property
    def more_robust(self):
        if self.u2 > self.u1:
            return "s2"
        if self.u1 > self.u2:
            return "s1"
        return "tie"


GAME_BLOCK = 10_000


def _world_rates(rng, model, mean, concentration, size):
    if model == "iid":
        return np.full(size, mean)
    if model == "beta":
        return rng.beta(mean * concentration, (1.0 - mean) * concentration, size)
    return (rng.random(size) < mean).astype(np.float64)


def _game_block(cfg, procedure, block):
    """Per-m rejection counts for one block of simulated worlds."""
    rng = derive_rng(cfg.seed, procedure, block)
    size = min(GAME_BLOCK, cfg.reps - block * GAME_BLOCK)
    if procedure == 0:
        q = _world_rates(rng, cfg.model, cfg.alpha, cfg.concentration, size)
        hits = rng.random((size, cfg.max_m)) < q[:, None]
    else:
        q = _world_rates(rng, cfg.model, cfg.alpha / 2, cfg.concentration, size)
        splits = rng.random((size, cfg.max_m, cfg.K)) < q[:, None, None]
        hits = splits.sum(axis=2) >= math.ceil(cfg.K / 2)
    return np.logical_or.accumulate(hits, axis=1).sum(axis=0)


def analyst_choice(v, c):
    """Smallest m maximizing v(m) - c(m), 1-based."""
    return int(np.argmax(v - c)) + 1


def run_game(cfg=GameSimConfig(), threads=1):
    """Monte Carlo rejection probabilities for m reruns of each procedure."""
    n_blocks = (cfg.reps + GAME_BLOCK - 1) // GAME_BLOCK
    items = [(p, b) for p in (0, 1) for b in range(n_blocks)]
    counts = pool_map(lambda it: _game_block(cfg, *it), items, threads)
    v = [sum(counts[p * n_blocks:(p + 1) * n_blocks]) / cfg.reps for p in (0, 1)]
    se = [np.sqrt(x * (1.0 - x) / cfg.reps) for x in v]
    c1, c2 = cfg.costs("cost1"), cfg.costs("cost2")
    return GameResult(v[0], v[1], se[0], se[1], c1, c2, analyst_choice(v[0], c1), analyst_choice(v[1], c2))


def game_csv(result):
    lines = ["m,v1,v1_se,v2,v2_se,c1,c2"]
    for i in range(len(result.v1)):
        lines.append(
            f"{i + 1},{result.v1[i]:.6f},{result.se1[i]:.6f},{result.v2[i]:.6f},{result.se2[i]:.6f},"
            f"{result.c1[i]!r},{result.c2[i]!r}"
        )
    return "\n".join(lines) + "\n"


def game_summary(result):
    return (
        f"single split: m* = {result.m1}, rejection probability {result.v1[result.m1 - 1]:.6f}, "
        f"policymaker payoff {result.u1:.6f}\n"
        f"median of K:  m* = {result.m2}, rejection probability {result.v2[result.m2 - 1]:.6f}, "
        f"policymaker payoff {result.u2:.6f}\n"
        f"more robust: {result.more_robust}\n"
    )


@dataclass(frozen=True)
class BoundCheck:
    alpha: float
    K: int
    hoeffding: float
    threshold: float
    min_K: int
    satisfied: bool


def verify_bounds(alpha=0.05, K=7):
    """Hoeffding bound exp(-K (1 - alpha)^2 / 2) against alpha.

    The bound falls below alpha exactly when K exceeds
    ``-2 ln(alpha) / (1 - alpha)^2``.
    """
    if not 0.0 < alpha < 1.0:
        raise ConfigError("alpha must lie in (0, 1)")
    if K < 1:
        raise ConfigError("K must be positive")
    hoeffding = math.exp(-K * (1.0 - alpha) ** 2 / 2.0)
    threshold = -2.0 * math.log(alpha) / (1.0 - alpha) ** 2
    return BoundCheck(alpha, int(K), hoeffding, threshold, math.floor(threshold) + 1, hoeffding < alpha)


# -- synthetic data ---------------------------------------------------------

B_SHARE = 0.1144
SCORE_COLUMN = "risk_score"
COMORBIDITIES = ("hypertension", "diabetes", "obesity", "kidney", "copd", "heart_failure")
_PREVALENCE = np.array([0.10, 0.15, 0.20, 0.08, 0.12, 0.06])


@dataclass(frozen=True)
class SyntheticConfig:
    n: int = 4000
    seed: int = 0
    bias: float = 2.0
    cost_noise: float = 0.4
    b_share: float = B_SHARE

    def __post_init__(self):
        if self.n < 100:
            raise ConfigError("synthetic data needs n >= 100")
        if self.bias < 0 or self.cost_noise < 0:
            raise ConfigError("bias and cost_noise must be nonnegative")
        if not 0.0 < self.b_share < 1.0:
            raise ConfigError("b_share must lie in (0, 1)")

    def to_mapping(self):
        return {"n": self.n, "seed": self.seed, "bias": self.bias, "cost_noise": self.cost_noise,
                "b_share": self.b_share}


def gen_synthetic(n=4000, seed=0, bias=2.0, cost_noise=0.4, b_share=B_SHARE):
    """Patients with a need count ``y`` and a cost-based status-quo score.

    Need is Poisson with a log-linear mean in age, six comorbidity
    indicators (slightly more prevalent in group b) and two biomarkers.
    Log spending equals ``log(1 + y)`` plus ``cost_noise`` times a
    clinic-pricing index for group r, but for group b individual need enters
    with weight ``1 - bias`` around the group average, so at ``bias > 1``
    sicker group-b patients spend less. The score column ``risk_score`` is
    a least-squares prediction of log spending fitted within each group, so
    it ranks group b by cost drivers rather than need.
    """
    cfg = SyntheticConfig(n, seed, bias, cost_noise, b_share)
    rng = derive_rng(cfg.seed)
    b = rng.random(n) < cfg.b_share
    age = rng.standard_normal(n)
    female = (rng.random(n) < 0.5).astype(np.float64)
    com = (rng.random((n, len(_PREVALENCE))) < _PREVALENCE + 0.03 * b[:, None]).astype(np.float64)
    bio_a = rng.normal(0.1 * b, 1.0)
    bio_b = rng.standard_normal(n)
    log_need = -0.2 + 0.45 * com.sum(axis=1) + 0.35 * bio_a + 0.2 * age + 0.15 * np.maximum(bio_b, 0.0)
    y = rng.poisson(np.exp(log_need)).astype(np.float64)
    visits = rng.poisson(np.exp(0.5 + 0.3 * age)).astype(np.float64)
    clinic = rng.standard_normal(n)
    ly = np.log1p(y)
    need_term = ly.copy()
    if b.any():
        need_term[b] = (1.0 - cfg.bias) * ly[b] + cfg.bias * ly[b].mean()
    log_cost = need_term + cfg.cost_noise * clinic + 0.1 * visits + 0.3 * rng.standard_normal(n)

    features = np.column_stack([age, female, com, bio_a, bio_b, visits, clinic])
    names = ("age", "female") + COMORBIDITIES + ("biomarker_a", "biomarker_b", "visits", "clinic_index")
    X = np.column_stack([np.ones(n), features])
    score = np.empty(n)
    for g in (False, True):
        rows = b == g
        if rows.sum() > X.shape[1]:
            coef = np.linalg.lstsq(X[rows], log_cost[rows], rcond=None)[0]
            score[rows] = X[rows] @ coef
        else:
            score[rows] = log_cost[rows].mean() if rows.any() else 0.0
    return Dataset.from_arrays(
        features, y, b.astype(np.int8), feature_names=names, scores={SCORE_COLUMN: score},
        group_labels=("r", "b"), outcome_name="need", group_name="group",
    )


def synthetic_status_quo(data, kappa=0.1):
    """Select the top ``kappa`` share by the embedded risk score."""
    return ColumnThreshold.at_quantile(data, SCORE_COLUMN, 1.0 - kappa)


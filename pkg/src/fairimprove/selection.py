"""Selection rules: map a training sample to a candidate decision rule.

Two families are provided. Score-threshold rules regress the outcome on the
covariates (OLS or cross-validated lasso) and select the top ``kappa`` share
of training scores. MILP rules search over linear classifiers
``1{x' beta >= 0}`` for one that improves fairness (or one group's accuracy)
on the training sample while not hurting the other utilities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from ._seeding import SELECTION, derive_rng
from .data import LinearClassifier, ScoreThreshold
from .errors import ConfigError, DataError, Infeasible, NoConvergence, RankDeficient, TimeLimit
from .kernels import lasso_cd
from .milp import (
    INFEASIBLE,
    TIME_LIMIT,
    MilpModel,
    SolverLimits,
    big_m,
    solve_lp,
    solve_milp,
    strict_margin,
)

OLS_RIDGE = 1e-8
LASSO_TOL = 1e-7
LASSO_MAX_SWEEPS = 10_000


# -- regression scorers -----------------------------------------------------


@dataclass(frozen=True, eq=False)
class FittedScorer:
    """Linear score ``x' coef`` on the original covariate scale."""

    coef: np.ndarray
    method: str
    penalty: float = 0.0

    def __post_init__(self):
        coef = np.array(self.coef, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(coef)):
            raise NoConvergence("fitted coefficients are not finite")
        coef.setflags(write=False)
        object.__setattr__(self, "coef", coef)

    def score(self, data):
        return data.X @ self.coef


def fit_ols(train):
    """Least squares of y on X (intercept included) with a 1e-8 ridge."""
    X, y = train.X, train.y
    n, d = X.shape
    if n <= d:
        raise RankDeficient(f"need more rows than columns for least squares ({n} <= {d})")
    gram = X.T @ X + OLS_RIDGE * np.eye(d)
    try:
        factor = cho_factor(gram)
    except LinAlgError:
        raise RankDeficient("normal equations are not positive definite") from None
    coef = cho_solve(factor, X.T @ y)
    if not np.all(np.isfinite(coef)):
        raise RankDeficient("least squares produced non-finite coefficients")
    return FittedScorer(coef, "ols")


def _standardize(X):
    """Center and scale the non-intercept columns; constant columns get scale 0."""
    mu = X[:, 1:].mean(axis=0)
    sd = X[:, 1:].std(axis=0)
    keep = sd > 0
    Z = np.zeros((X.shape[0], X.shape[1] - 1))
    Z[:, keep] = (X[:, 1:][:, keep] - mu[keep]) / sd[keep]
    return Z, mu, sd, keep


def lambda_max(X, y):
    """Smallest penalty that zeroes every standardized coefficient."""
    Z, _, _, _ = _standardize(np.asarray(X, dtype=np.float64))
    return float(np.abs(Z.T @ (y - y.mean())).max(initial=0.0) / len(y))


def lambda_grid(X, y, n_lambda=20, ratio=1e-3):
    top = lambda_max(X, y)
    if top == 0.0:
        return np.zeros(1)
    return top * np.logspace(0.0, math.log10(ratio), n_lambda)


def _lasso_path(X, y, lambdas):
    """Standardized-lasso coefficients (on the original scale) along ``lambdas``."""
    Z, mu, sd, keep = _standardize(X)
    n = len(y)
    Zk = Z[:, keep]
    gram = Zk.T @ Zk / n
    xty = Zk.T @ (y - y.mean()) / n
    b = np.zeros(Zk.shape[1])
    out = []
    for lam in lambdas:
        if Zk.shape[1]:
            b, sweeps = lasso_cd(gram, xty, float(lam), b, LASSO_TOL, LASSO_MAX_SWEEPS)
            if sweeps < 0:
                raise NoConvergence(f"lasso did not converge at lambda={lam:.4g}")
        slope = np.zeros(X.shape[1] - 1)
        slope[keep] = b / sd[keep]
        coef = np.concatenate([[y.mean() - slope @ mu], slope])
        out.append(coef)
    return out


def fit_lasso(train, lambdas=None, folds=5, n_lambda=20, lambda_ratio=1e-3, seed=0):
    """Lasso by cyclic coordinate descent with the penalty chosen by K-fold CV.

    The objective is ``(1/2n) |y - ybar - Z b|^2 + lambda |b|_1`` on
    standardized non-intercept columns ``Z``; the returned scorer is on the
    original scale. Ties in CV error go to the larger penalty.
    """
    X, y = train.X, train.y
    if folds < 2:
        raise ConfigError("lasso cross-validation needs at least 2 folds")
    if lambdas is None:
        lambdas = lambda_grid(X, y, n_lambda, lambda_ratio)
    lambdas = np.sort(np.asarray(lambdas, dtype=np.float64))[::-1]
    if lambdas.size == 0 or np.any(lambdas < 0):
        raise ConfigError("lambda grid must be nonempty and nonnegative")
    n = len(y)
    if lambdas.size > 1:
        if n < folds:
            raise ConfigError(f"cannot form {folds} folds from {n} rows")
        fold_of = np.empty(n, dtype=np.int64)
        fold_of[derive_rng(seed, SELECTION).permutation(n)] = np.arange(n) % folds
        mse = np.zeros(lambdas.size)
        for f in range(folds):
            fit, held = fold_of != f, fold_of == f
            path = _lasso_path(X[fit], y[fit], lambdas)
            for i, coef in enumerate(path):
                mse[i] += np.mean((y[held] - X[held] @ coef) ** 2) / folds
        best = int(np.argmin(mse))
    else:
        best = 0
    coef = _lasso_path(X, y, lambdas[: best + 1])[-1]
    return FittedScorer(coef, "lasso", float(lambdas[best]))


def make_candidate(scorer, train, kappa):
    """Select rows scoring strictly above the lower (1 - kappa) training quantile."""
    if not 0.0 < kappa < 1.0:
        raise ConfigError("capacity kappa must lie in (0, 1)")
    scores = scorer.score(train)
    threshold = float(np.quantile(scores, 1.0 - kappa, method="lower"))
    degenerate = not np.any(scores > threshold)
    return ScoreThreshold(scorer, threshold, degenerate)


# -- MILP formulations ------------------------------------------------------


@dataclass(eq=False)
class BuiltMilp:
    """A MILP over linear classifiers plus the bookkeeping needed to read it back.

    ``Z`` is the standardized training design (intercept first) the
    classifier constraints are written on; ``mu``/``sd`` undo the scaling.
    """

    model: MilpModel
    beta: list
    decisions: list
    Z: np.ndarray
    mu: np.ndarray
    sd: np.ndarray
    box: float
    index: dict = field(default_factory=dict)


def _design(train):
    Z, mu, sd, keep = _standardize(train.X)
    sd = np.where(keep, sd, 1.0)
    return np.column_stack([np.ones(train.n), Z]), mu, sd


def _add_classifier(model, Z, box):
    """beta in the box, binary D and the big-M link D_j = 1{Z_j beta >= 0}."""
    m, d = Z.shape
    beta = [model.add_var(-box, box, name=f"beta{k}") for k in range(d)]
    dec = [model.add_var(0, 1, integer=True, name=f"D{j}") for j in range(m)]
    C = big_m(Z, box)
    eps = strict_margin(C)
    for j in range(m):
        row = {beta[k]: Z[j, k] for k in range(d) if Z[j, k] != 0.0}
        model.add_constraint({**row, dec[j]: -C[j]}, "<=", -eps[j], f"strict{j}")
        model.add_constraint({**row, dec[j]: -C[j]}, ">=", -C[j], f"weak{j}")
    return beta, dec


def classification_rates(y, groups, d):
    """Per-group share of correct decisions, ordered (r, b)."""
    return tuple(float(np.mean(y[groups == g] == d[groups == g])) for g in (0, 1))


def calibration_rates(y, groups, d):
    """Per-group mean outcome among selected rows, ordered (r, b)."""
    out = []
    for g in (0, 1):
        sel = (groups == g) & (d == 1)
        if not sel.any():
            raise Infeasible(f"status quo selects nobody in group {'rb'[g]}")
        out.append(float(y[sel].mean()))
    return tuple(out)


def _objective(model, U, target, kind):
    """Fairness (min |U_r - U_b|) or accuracy (max U_target) objective and side constraints."""
    gap = model.add_var(0.0, max(model.variables[U[0]].ub, model.variables[U[1]].ub)
                        - min(model.variables[U[0]].lb, model.variables[U[1]].lb), name="t")
    model.add_constraint({gap: 1.0, U[0]: -1.0, U[1]: 1.0}, ">=", 0.0, "abs_pos")
    model.add_constraint({gap: 1.0, U[0]: 1.0, U[1]: -1.0}, ">=", 0.0, "abs_neg")
    if kind == "fair":
        model.set_objective({gap: 1.0}, "min")
    else:
        model.set_objective({U[target]: 1.0}, "max")
    return gap


def _status_quo_constraints(model, U, base, iota, kind, target):
    if kind == "fair":
        for g in (0, 1):
            model.add_constraint({U[g]: 1.0}, ">=", base[g] + iota, f"improve_{'rb'[g]}")
    else:
        other = 1 - target
        model.add_constraint({U[other]: 1.0}, ">=", base[other] + iota, f"improve_{'rb'[other]}")
        slack = abs(base[0] - base[1]) - iota
        model.add_constraint({U[0]: 1.0, U[1]: -1.0}, "<=", slack, "fair_upper")
        model.add_constraint({U[0]: 1.0, U[1]: -1.0}, ">=", -slack, "fair_lower")


def _check_kind(kind, target):
    if kind not in ("fair", "acc"):
        raise ConfigError("objective must be 'fair' or 'acc'")
    if target not in (0, 1):
        raise ConfigError("target group must be 0 (r) or 1 (b)")


def build_classification_milp(train, a0, iota=1e-4, box=10.0, kind="fair", target=0):
    """Linear classifier search under classification utility.

    ``kind="fair"`` minimizes ``|U_r - U_b|`` subject to both group
    accuracies exceeding the status quo's by ``iota``; ``kind="acc"``
    maximizes group ``target``'s accuracy subject to the other group's
    accuracy rising by ``iota`` and unfairness falling by ``iota``.
    """
    _check_kind(kind, target)
    if iota <= 0 or box <= 0:
        raise ConfigError("iota and the box bound must be positive")
    y, groups = train.y, train.groups
    if not np.all((y == 0) | (y == 1)):
        raise DataError("classification MILP needs a binary outcome")
    base = classification_rates(y, groups, a0.decide(train))
    Z, mu, sd = _design(train)
    model = MilpModel()
    U = [model.add_var(0.0, 1.0, name=f"U_{g}") for g in "rb"]
    beta, dec = _add_classifier(model, Z, box)
    for g in (0, 1):
        rows = np.flatnonzero(groups == g)
        n_g = len(rows)
        coefs = {U[g]: 1.0}
        for j in rows:
            coefs[dec[j]] = -(2.0 * y[j] - 1.0) / n_g
        model.add_constraint(coefs, "=", float(np.sum(1.0 - y[rows])) / n_g, f"link_{'rb'[g]}")
    gap = _objective(model, U, target, kind)
    _status_quo_constraints(model, U, base, iota, kind, target)
    return BuiltMilp(model, beta, dec, Z, mu, sd, box, {"U": U, "t": gap, "base": base})


def build_fairness_milp(train, a0, iota=1e-4, box=10.0):
    return build_classification_milp(train, a0, iota, box, "fair")


def build_accuracy_milp(train, a0, iota=1e-4, box=10.0, target=0):
    return build_classification_milp(train, a0, iota, box, "acc", target)


def build_calibration_milp(train, a0, iota=1e-4, kappa=0.1, box=10.0, kind="fair", target=0):
    """Linear classifier search under calibration utility with a capacity.

    Group utilities are mean outcomes among selected rows, which are ratios
    in ``D``. They are linearized with ``t_1 = 1/(g'D)``, ``t_0 =
    1/((1-g)'D)``, ``s = t D`` and the McCormick inequalities that force
    ``s_i = t D_i`` for binary ``D``. Exactly ``round(kappa m)`` rows are
    selected.
    """
    _check_kind(kind, target)
    if iota <= 0 or box <= 0:
        raise ConfigError("iota and the box bound must be positive")
    if not 0.0 < kappa < 1.0:
        raise ConfigError("capacity kappa must lie in (0, 1)")
    y, groups = train.y, train.groups
    m = train.n
    cap = int(round(kappa * m))
    if cap < 2:
        raise Infeasible(f"capacity {cap} cannot cover both groups")
    base = calibration_rates(y, groups, a0.decide(train))
    Z, mu, sd = _design(train)
    model = MilpModel()
    lo, hi = min(0.0, float(y.min())), max(0.0, float(y.max()))
    U = [model.add_var(lo, hi, name=f"U_{g}") for g in "rb"]
    beta, dec = _add_classifier(model, Z, box)
    model.add_constraint({dj: 1.0 for dj in dec}, "=", cap, "capacity")
    scale = {}
    for g, name in ((1, "1"), (0, "0")):
        s = [model.add_var(0.0, 1.0, name=f"s{name}_{i}") for i in range(m)]
        t = model.add_var(1.0 / m, 1.0, name=f"t{name}")
        member = groups == g
        z = y * member
        model.add_constraint({U[g]: 1.0, **{s[i]: -z[i] for i in range(m) if z[i] != 0.0}}, "=", 0.0,
                             f"ratio_{'rb'[g]}")
        model.add_constraint({s[i]: 1.0 for i in range(m) if member[i]}, "=", 1.0, f"normalize_{'rb'[g]}")
        for i in range(m):
            model.add_constraint({s[i]: 1.0, t: -1.0}, "<=", 0.0)
            model.add_constraint({s[i]: 1.0, dec[i]: -1.0}, "<=", 0.0)
            model.add_constraint({s[i]: 1.0, t: -1.0, dec[i]: -1.0}, ">=", -1.0)
        scale[g] = (s, t)
    gap = _objective(model, U, target, kind)
    _status_quo_constraints(model, U, base, iota, kind, target)
    return BuiltMilp(model, beta, dec, Z, mu, sd, box,
                     {"U": U, "t": gap, "base": base, "s1": scale[1][0], "t1": scale[1][1],
                      "s0": scale[0][0], "t0": scale[0][1], "capacity": cap})


def _repair(built, D, margin_scale):
    """A beta reproducing ``D`` with margin on both sides, or None."""
    Z = built.Z
    m, d = Z.shape
    C = big_m(Z, built.box)
    eps = strict_margin(C)
    lp = MilpModel()
    beta = [lp.add_var(-built.box, built.box) for _ in range(d)]
    for j in range(m):
        row = {beta[k]: Z[j, k] for k in range(d) if Z[j, k] != 0.0}
        if D[j] == 1:
            lp.add_constraint(row, ">=", margin_scale * eps[j])
        else:
            lp.add_constraint(row, "<=", -eps[j])
    lp.set_objective({})
    sol = solve_lp(lp)
    return None if sol.status == INFEASIBLE else sol.x


def solve_built(built, limits=SolverLimits()):
    """Solve and return ``(beta_std, D, solution)`` with ``beta_std`` on the standardized scale.

    ``beta_std`` reproduces ``D`` on the training design: it is re-fitted by
    an LP with ``D`` fixed so rows decided 1 clear zero by half the strict
    margin.
    """
    sol = solve_milp(built.model, limits)
    if sol.status == INFEASIBLE:
        raise Infeasible("no linear classifier satisfies the improvement constraints")
    if sol.status == TIME_LIMIT:
        raise TimeLimit(f"solver limit reached after {sol.nodes} nodes (best bound {sol.bound:.6g})", sol)
    D = np.round(sol.x[built.decisions]).astype(np.int8)
    beta = None
    for margin in (0.5, 0.0):
        beta = _repair(built, D, margin)
        if beta is not None:
            break
    if beta is None:
        beta = sol.x[built.beta]
    return beta, D, sol


def to_original_scale(beta_std, mu, sd):
    slope = beta_std[1:] / sd
    return np.concatenate([[beta_std[0] - slope @ mu], slope])


def solve_and_extract(built, limits=SolverLimits()):
    """Linear classifier on the original covariates from the MILP incumbent."""
    beta, _, _ = solve_built(built, limits)
    return LinearClassifier(to_original_scale(beta, built.mu, built.sd))


# -- selection rules --------------------------------------------------------


class SelectionRule:
    """Maps ``(train, a0, seed)`` to a candidate decision rule."""

    name = "rule"

    def select(self, train, a0, seed=0):
        raise NotImplementedError

    def to_mapping(self):
        return {"rule": self.name}


@dataclass(frozen=True)
class Identity(SelectionRule):
    """Returns the status quo unchanged."""

    name = "identity"

    def select(self, train, a0, seed=0):
        return a0


@dataclass(frozen=True)
class Fixed(SelectionRule):
    """Returns a pre-specified candidate regardless of the training data."""

    candidate: object = None
    name = "fixed"

    def select(self, train, a0, seed=0):
        return self.candidate


def _check_kappa(kappa):
    if not 0.0 < kappa < 1.0:
        raise ConfigError("capacity kappa must lie in (0, 1)")


@dataclass(frozen=True)
class OlsThreshold(SelectionRule):
    kappa: float = 0.03
    name = "ols"

    def __post_init__(self):
        _check_kappa(self.kappa)

    def select(self, train, a0, seed=0):
        return make_candidate(fit_ols(train), train, self.kappa)

    def to_mapping(self):
        return {"rule": self.name, "kappa": self.kappa}


@dataclass(frozen=True)
class LassoThreshold(SelectionRule):
    kappa: float = 0.03
    folds: int = 5
    n_lambda: int = 20
    lambda_ratio: float = 1e-3
    name = "lasso"

    def __post_init__(self):
        _check_kappa(self.kappa)
        if self.folds < 2 or self.n_lambda < 1 or not 0 < self.lambda_ratio <= 1:
            raise ConfigError("invalid lasso settings")

    def select(self, train, a0, seed=0):
        scorer = fit_lasso(train, folds=self.folds, n_lambda=self.n_lambda,
                           lambda_ratio=self.lambda_ratio, seed=seed)
        return make_candidate(scorer, train, self.kappa)

    def to_mapping(self):
        return {"rule": self.name, "kappa": self.kappa, "folds": self.folds,
                "n_lambda": self.n_lambda, "lambda_ratio": self.lambda_ratio}


@dataclass(frozen=True)
class MilpFairness(SelectionRule):
    """Most-fair linear classifier improving both groups' utility by ``iota``."""

    iota: float = 1e-4
    family: str = "classification"
    kappa: float = 0.1
    box: float = 10.0
    node_limit: int = 200_000
    time_limit: float | None = None
    name = "milp-fair"
    kind = "fair"
    target = 0

    def __post_init__(self):
        if self.iota <= 0 or self.box <= 0:
            raise ConfigError("iota and the box bound must be positive")
        if self.family not in ("classification", "calibration"):
            raise ConfigError("MILP family must be 'classification' or 'calibration'")
        if self.family == "calibration":
            _check_kappa(self.kappa)

    def build(self, train, a0):
        if self.family == "classification":
            return build_classification_milp(train, a0, self.iota, self.box, self.kind, self.target)
        return build_calibration_milp(train, a0, self.iota, self.kappa, self.box, self.kind, self.target)

    def select(self, train, a0, seed=0):
        limits = SolverLimits(self.node_limit, self.time_limit)
        return solve_and_extract(self.build(train, a0), limits)

    def to_mapping(self):
        out = {"rule": self.name, "iota": self.iota, "family": self.family, "box": self.box,
               "node_limit": self.node_limit}
        if self.family == "calibration":
            out["kappa"] = self.kappa
        if self.time_limit is not None:
            out["time_limit"] = self.time_limit
        return out


@dataclass(frozen=True)
class MilpAccuracy(MilpFairness):
    """Most accurate (for ``target``) classifier that is fairer and helps the other group."""

    target: int = 0
    name = "milp-acc"
    kind = "acc"

    def __post_init__(self):
        super().__post_init__()
        if self.target not in (0, 1):
            raise ConfigError("target group must be 0 (r) or 1 (b)")

    def to_mapping(self):
        return {**super().to_mapping(), "target": "rb"[self.target]}


def rule_from_mapping(raw):
    """Build a selection rule from config keys (``rule = "ols" | "lasso" | ...``)."""
    raw = dict(raw)
    kind = raw.pop("rule", "ols")
    if "target" in raw and isinstance(raw["target"], str):
        if raw["target"] not in ("r", "b"):
            raise ConfigError("target must be 'r' or 'b'")
        raw["target"] = "rb".index(raw["target"])
    classes = {"identity": Identity, "ols": OlsThreshold, "lasso": LassoThreshold,
               "milp-fair": MilpFairness, "milp-acc": MilpAccuracy}
    try:
        cls = classes[kind]
    except KeyError:
        raise ConfigError(f"unknown selection rule {kind!r}; choose from {sorted(classes)}") from None
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ConfigError(f"bad settings for rule {kind!r}: {exc}") from None

"""Compare the MILP selection programs with brute-force enumeration.

Each random instance is solved twice: once by branch and bound on the
MILP, once by listing every labeling a linear classifier in the box can
produce and scoring it directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._parallel import pool_map
from ._seeding import derive_rng
from .data import Dataset, LinearClassifier
from .errors import Infeasible
from .milp import enumerate_linear_classifiers
from .selection import (
    build_calibration_milp,
    build_classification_milp,
    calibration_rates,
    classification_rates,
    solve_built,
)

KINDS = ("fair", "acc-r", "acc-b", "calibration")


@dataclass(frozen=True)
class CheckRow:
    instance: int
    kind: str
    milp: float
    oracle: float

    @property
    def deviation(self):
        if math.isnan(self.milp) and math.isnan(self.oracle):
            return 0.0
        if math.isnan(self.milp) or math.isnan(self.oracle):
            return math.inf
        return abs(self.milp - self.oracle)


def random_instance(seed, index, calibration=False):
    """Small random dataset and a random linear status quo."""
    rng = derive_rng(seed, index, int(calibration))
    m = 8 if calibration else int(rng.integers(6, 11))
    d = int(rng.integers(2, 4))
    features = rng.normal(size=(m, d - 1))
    groups = np.concatenate([[0, 1, 0, 1], rng.integers(0, 2, m - 4)])
    if calibration:
        y = rng.poisson(2.0, m).astype(np.float64)
    else:
        y = rng.integers(0, 2, m).astype(np.float64)
    data = Dataset.from_arrays(features, y, groups)
    if calibration:
        # Status quo selects the lowest-outcome row of each group (ties at
        # random), so its utilities exist and leave room for improvement.
        pick = np.zeros(m, dtype=bool)
        for g in (0, 1):
            rows = np.flatnonzero(groups == g)
            low = rows[y[rows] == y[rows].min()]
            pick[rng.choice(low)] = True
        a0 = _FixedDecisions(pick.astype(np.int8))
    else:
        a0 = LinearClassifier(rng.normal(size=d))
    return data, a0


@dataclass(frozen=True, eq=False)
class _FixedDecisions:
    decisions: np.ndarray

    def decide(self, data):
        return self.decisions

    def describe(self):
        return "fixed"


def brute_force(data, a0, kind, iota=1e-4, box=10.0, kappa=0.25):
    """Optimal objective over all realizable labelings, or NaN if none is feasible."""
    Z = _standardized(data.X)
    labelings = enumerate_linear_classifiers(Z, box)
    y, g = data.y, data.groups
    best = math.nan
    if kind == "calibration":
        base = calibration_rates(y, g, a0.decide(data))
        cap = int(round(kappa * data.n))
        for D in labelings:
            if D.sum() != cap:
                continue
            try:
                U = calibration_rates(y, g, D)
            except Infeasible:
                continue
            if U[0] >= base[0] + iota - 1e-12 and U[1] >= base[1] + iota - 1e-12:
                best = _better(best, abs(U[0] - U[1]), "min")
        return best
    base = classification_rates(y, g, a0.decide(data))
    for D in labelings:
        U = classification_rates(y, g, D)
        if kind == "fair":
            if U[0] >= base[0] + iota - 1e-12 and U[1] >= base[1] + iota - 1e-12:
                best = _better(best, abs(U[0] - U[1]), "min")
        else:
            target = 0 if kind == "acc-r" else 1
            other = 1 - target
            slack = abs(base[0] - base[1]) - iota
            if U[other] >= base[other] + iota - 1e-12 and abs(U[0] - U[1]) <= slack + 1e-12:
                best = _better(best, U[target], "max")
    return best


def _better(current, value, sense):
    if math.isnan(current):
        return value
    return min(current, value) if sense == "min" else max(current, value)


def _standardized(X):
    Z = X.copy()
    for j in range(1, X.shape[1]):
        sd = X[:, j].std()
        Z[:, j] = (X[:, j] - X[:, j].mean()) / sd if sd > 0 else 0.0
    return Z


def milp_value(data, a0, kind, iota=1e-4, box=10.0, kappa=0.25):
    if kind == "calibration":
        built = build_calibration_milp(data, a0, iota, kappa, box)
    elif kind == "fair":
        built = build_classification_milp(data, a0, iota, box, "fair")
    else:
        built = build_classification_milp(data, a0, iota, box, "acc", 0 if kind == "acc-r" else 1)
    try:
        _, _, sol = solve_built(built)
    except Infeasible:
        return math.nan
    return sol.objective


def run_milp_check(instances=10, seed=0, threads=1):
    """Rows comparing MILP and brute-force optima for every kind and instance."""
    items = [(i, kind) for i in range(instances) for kind in KINDS]

    def task(item):
        i, kind = item
        data, a0 = random_instance(seed, i, kind == "calibration")
        return CheckRow(i, kind, milp_value(data, a0, kind), brute_force(data, a0, kind))

    return pool_map(task, items, threads)


def check_csv(rows):
    lines = ["instance,kind,milp,oracle,deviation"]
    for r in rows:
        lines.append(f"{r.instance},{r.kind},{_fmt(r.milp)},{_fmt(r.oracle)},{_fmt(r.deviation)}")
    return "\n".join(lines) + "\n"


def _fmt(v):
    return "nan" if math.isnan(v) else ("inf" if math.isinf(v) else f"{v:.9f}")

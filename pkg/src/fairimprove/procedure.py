"""Repeated sample splitting with median p-value aggregation.

Each of K rounds splits the data, builds a candidate on the training part,
and tests it against the status quo on the test part. The procedure rejects
when the lower median of the K round p-values is below ``alpha / 2``.
Rounds that cannot produce a valid test (no candidate, empty normalization
cell, one-group split) count as ``p_k = 1``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from ._parallel import pool_map
from ._seeding import BOOTSTRAP, SELECTION, derive_rng
from .data import SplitPlan, split_sample
from .errors import AllRoundsFailed, ConfigError, DegenerateCell, DegenerateSplit, SelectionFailure
from .improvement import DeltaTriple, bootstrap_from_columns, component_pvalues
from .utility import point_estimates, utility_columns

MISSING = "—"

REPORT_COLUMNS = (
    "iteration", "a1_acc_r", "a0_acc_r", "p_r", "a1_acc_b", "a0_acc_b", "p_b",
    "a1_unfair", "a0_unfair", "p_f", "p",
)


@dataclass(frozen=True)
class ProcedureConfig:
    K: int = 7
    alpha: float = 0.05
    beta: float = 0.5
    Q: int = 10_000
    delta: DeltaTriple = DeltaTriple()
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.K < 1:
            raise ConfigError("K must be at least 1")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie in (0, 1)")
        if not 0.0 < self.beta < 1.0:
            raise ConfigError("split fraction beta must lie in (0, 1)")
        if self.Q < 1:
            raise ConfigError("Q must be at least 1")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")

    def to_mapping(self):
        """Settings that affect results (thread count excluded)."""
        return {
            "K": self.K, "alpha": self.alpha, "beta": self.beta, "Q": self.Q, "seed": self.seed,
            "delta_r": self.delta.delta_r, "delta_b": self.delta.delta_b, "delta_f": self.delta.delta_f,
        }


@dataclass(frozen=True)
class RoundRecord:
    k: int
    candidate: str
    estimates: object
    p_r: float
    p_b: float
    p_f: float
    p: float
    failed: bool = False
    reason: str = ""


@dataclass(frozen=True)
class ProcedureResult:
    rounds: tuple
    p_med: float
    reject: bool
    alpha: float
    delta: DeltaTriple

    @property
    def pvalues(self):
        return np.array([r.p for r in self.rounds])


@dataclass(frozen=True, eq=False)
class PreparedRound:
    """Everything about round k that does not depend on the improvement margins."""

    k: int
    candidate: str
    estimates: object = None
    cache: object = None
    reason: str = ""

    @property
    def failed(self):
        return self.cache is None


def lower_median(pvalues):
    """The ceil(K/2)-th smallest of K values."""
    ps = np.sort(np.asarray(pvalues, dtype=np.float64))
    if ps.size == 0:
        raise ConfigError("median of an empty set")
    return float(ps[math.ceil(ps.size / 2) - 1])


def round_seed(seed, k, stream):
    """Integer seed for one stream of round ``k``."""
    return int(derive_rng(seed, k, stream).integers(0, 2**63 - 1))


def prepare_round(data, a0, rule, spec, cfg, k):
    """Split, select a candidate on the training part and bootstrap the test part."""
    try:
        train, test = split_sample(data, SplitPlan(cfg.seed, cfg.beta, k))
    except DegenerateSplit as exc:
        return PreparedRound(k, MISSING, reason=f"split: {exc}")
    try:
        # The candidate is fixed before the test rows are touched.
        candidate = rule.select(train, a0, round_seed(cfg.seed, k, SELECTION))
    except SelectionFailure as exc:
        return PreparedRound(k, MISSING, reason=f"{type(exc).__name__}: {exc}")
    label = candidate.describe()
    M, layout = utility_columns(test, a0.decide(test), candidate.decide(test), spec)
    try:
        _, estimates = point_estimates(M.mean(axis=0), layout)
    except DegenerateCell as exc:
        return PreparedRound(k, label, reason=str(exc))
    cache = bootstrap_from_columns(M, layout, cfg.Q, round_seed(cfg.seed, k, BOOTSTRAP))
    return PreparedRound(k, label, estimates, cache)


def prepare_rounds(data, a0, rule, spec, cfg):
    return pool_map(lambda k: prepare_round(data, a0, rule, spec, cfg, k), range(1, cfg.K + 1), cfg.threads)


def evaluate_rounds(prepared, delta, alpha):
    """Procedure result for one margin triple from prepared rounds."""
    if all(r.failed for r in prepared):
        raise AllRoundsFailed("every round failed: " + "; ".join(r.reason for r in prepared))
    records = []
    for r in prepared:
        if r.failed:
            records.append(RoundRecord(r.k, r.candidate, None, math.nan, math.nan, math.nan, 1.0, True, r.reason))
            continue
        out = component_pvalues(r.cache, r.estimates, delta, alpha)
        records.append(RoundRecord(r.k, r.candidate, r.estimates, out.p_r, out.p_b, out.p_f, out.p))
    p_med = lower_median([rec.p for rec in records])
    return ProcedureResult(tuple(records), p_med, p_med < alpha / 2, alpha, delta)


def run_procedure(data, a0, rule, spec, cfg=ProcedureConfig()):
    """K-split test of whether ``rule`` finds an improvement on ``a0``."""
    return evaluate_rounds(prepare_rounds(data, a0, rule, spec, cfg), cfg.delta, cfg.alpha)


@dataclass(frozen=True, eq=False)
class SweepGrid:
    """Median p-values over a grid; ``p_med[i, j]`` is at ``(delta_a[i], delta_f[j])``."""

    delta_a: np.ndarray
    delta_f: np.ndarray
    p_med: np.ndarray
    alpha: float = 0.05

    def __post_init__(self):
        if self.p_med.shape != (len(self.delta_a), len(self.delta_f)):
            raise ValueError("grid values do not match the axes")


def _axis(values, name):
    arr = np.sort(np.asarray(values, dtype=np.float64).reshape(-1))
    if arr.size == 0:
        raise ConfigError(f"{name} grid is empty")
    return arr


def delta_sweep(data, a0, rule, spec, cfg, delta_a, delta_f):
    """Median p-value at every ``(delta_a, delta_a, delta_f)`` margin.

    Splits, candidates and bootstrap replicates are computed once and reused
    across cells; only the statistics are recombined.
    """
    delta_a = _axis(delta_a, "delta_a")
    delta_f = _axis(delta_f, "delta_f")
    if delta_f.max() > 1:
        raise ConfigError("delta_f values must not exceed 1")
    prepared = prepare_rounds(data, a0, rule, spec, cfg)
    grid = np.empty((delta_a.size, delta_f.size))
    for i, da in enumerate(delta_a):
        for j, df in enumerate(delta_f):
            grid[i, j] = evaluate_rounds(prepared, DeltaTriple(da, da, df), cfg.alpha).p_med
    return SweepGrid(delta_a, delta_f, grid, cfg.alpha)


# -- reports ----------------------------------------------------------------


def _u(v):
    return MISSING if v is None or not math.isfinite(v) else f"{v:.2f}"


def _p(v):
    return MISSING if v is None or not math.isfinite(v) else f"{v:.4f}"


def report_rows(result):
    """String cells of the per-round table followed by the median row."""
    rows = []
    for rec in result.rounds:
        est = rec.estimates
        if est is None:
            utils = [None] * 6
        else:
            utils = [est.A[1, 0], est.A[0, 0], est.A[1, 1], est.A[0, 1], est.unfairness(1), est.unfairness(0)]
        rows.append([
            str(rec.k), _u(utils[0]), _u(utils[1]), _p(rec.p_r), _u(utils[2]), _u(utils[3]), _p(rec.p_b),
            _u(utils[4]), _u(utils[5]), _p(rec.p_f), _p(rec.p),
        ])
    rows.append(["median"] + [MISSING] * 9 + [_p(result.p_med)])
    return rows


def render_csv(result):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    writer.writerows(report_rows(result))
    return buf.getvalue()


def render_text(result, title=None):
    rows = [list(REPORT_COLUMNS)] + report_rows(result)
    widths = [max(len(r[c]) for r in rows) for c in range(len(REPORT_COLUMNS))]
    lines = []
    if title:
        lines += [title, ""]
    for i, row in enumerate(rows):
        lines.append("  ".join(cell.rjust(w) for cell, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    d = result.delta
    lines += [
        "",
        f"margins: delta_r={d.delta_r:g} delta_b={d.delta_b:g} delta_f={d.delta_f:g}",
        f"median p-value: {result.p_med:.4f} (reject if below {result.alpha / 2:g})",
        f"reject: {'yes' if result.reject else 'no'}",
    ]
    for rec in result.rounds:
        if rec.failed:
            lines.append(f"round {rec.k} failed: {rec.reason}")
    return "\n".join(lines) + "\n"


def render_report(result, title=None):
    """``(csv_text, aligned_text)`` for a procedure result."""
    return render_csv(result), render_text(result, title)


def render_sweep_csv(grid):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("delta_a", "delta_f", "p_med", "reject"))
    for i, da in enumerate(grid.delta_a):
        for j, df in enumerate(grid.delta_f):
            p = grid.p_med[i, j]
            writer.writerow((repr(float(da)), repr(float(df)), f"{p:.4f}", int(p < grid.alpha / 2)))
    return buf.getvalue()


def render_sweep_text(grid):
    head = ["da \\ df"] + [f"{v:g}" for v in grid.delta_f]
    rows = [head] + [[f"{da:g}"] + [f"{p:.4f}" for p in grid.p_med[i]] for i, da in enumerate(grid.delta_a)]
    widths = [max(len(r[c]) for r in rows) for c in range(len(head))]
    lines = ["  ".join(cell.rjust(w) for cell, w in zip(row, widths)) for row in rows]
    lines += ["", f"cells with median p-value below {grid.alpha / 2:g} reject"]
    return "\n".join(lines) + "\n"

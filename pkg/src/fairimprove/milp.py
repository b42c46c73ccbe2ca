"""Small dense LP/MILP solver and a brute-force linear-classifier enumerator.

The LP solver is a bounded-variable primal simplex with a two-phase start
(artificial variables), Dantzig pricing, and a switch to Bland's rule after
``3 * (rows + cols)`` pivots. The MILP solver is best-bound branch and bound
that dives depth-first on the floor child and requeues the ceil child.

All variables must have finite bounds.

Text format
-----------
:meth:`MilpModel.to_lp` / :meth:`MilpModel.from_lp` use the grammar::

    MINIMIZE | MAXIMIZE
      obj: <terms> [<sign> <constant>]
    SUBJECT TO
      <name>: <terms> <= | = | >= <number>
    BOUNDS
      <number> <= <var> <= <number>
    INTEGER
      <var> ...
    END

where ``<terms>`` is a sequence of ``<sign> <coef> <var>`` triples, for
example ``+ 1.5 x0 - 2.0 x1``. Blank lines and lines starting with ``\\``
are ignored.
"""

from __future__ import annotations

import heapq
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve

from .errors import ConfigError, NumericalFailure, TooLarge

FEAS_TOL = 1e-7
# Branching integrality tolerance. It must stay well below the big-M strict
# margin (1e-6 * C) or near-integral binaries could fake a strict inequality.
INT_TOL = 1e-9
GAP_TOL = 1e-6
PIVOT_TOL = 1e-10
COST_TOL = 1e-9

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
TIME_LIMIT = "time_limit"


@dataclass
class Variable:
    lb: float
    ub: float
    integer: bool = False
    name: str = ""


@dataclass
class Constraint:
    coefs: dict
    sense: str
    rhs: float
    name: str = ""


@dataclass
class MilpModel:
    """Linear objective and constraints over boxed, optionally integral variables."""

    variables: list = field(default_factory=list)
    constraints: list = field(default_factory=list)
    objective: dict = field(default_factory=dict)
    sense: str = "min"
    constant: float = 0.0

    def add_var(self, lb, ub, integer=False, name=None):
        lb, ub = float(lb), float(ub)
        if not (math.isfinite(lb) and math.isfinite(ub)):
            raise ConfigError("variable bounds must be finite")
        if lb > ub:
            raise ConfigError(f"empty bounds [{lb}, {ub}]")
        idx = len(self.variables)
        self.variables.append(Variable(lb, ub, bool(integer), name or f"x{idx}"))
        return idx

    def add_constraint(self, coefs, sense, rhs, name=None):
        if sense not in ("<=", "=", ">="):
            raise ConfigError(f"unknown constraint sense {sense!r}")
        clean = {}
        for j, a in dict(coefs).items():
            if not 0 <= j < len(self.variables):
                raise ConfigError(f"constraint references unknown variable {j}")
            if a != 0.0:
                clean[int(j)] = clean.get(int(j), 0.0) + float(a)
        self.constraints.append(Constraint(clean, sense, float(rhs), name or f"c{len(self.constraints)}"))
        return len(self.constraints) - 1

    def set_objective(self, coefs, sense="min", constant=0.0):
        if sense not in ("min", "max"):
            raise ConfigError("objective sense must be 'min' or 'max'")
        self.objective = {int(j): float(a) for j, a in dict(coefs).items()}
        self.sense = sense
        self.constant = float(constant)

    @property
    def n_vars(self):
        return len(self.variables)

    def var_index(self, name):
        for j, v in enumerate(self.variables):
            if v.name == name:
                return j
        raise KeyError(name)

    def arrays(self):
        """Dense ``(c, A, senses, b, lb, ub, is_int)``."""
        n = self.n_vars
        c = np.zeros(n)
        for j, a in self.objective.items():
            c[j] = a
        A = np.zeros((len(self.constraints), n))
        for i, con in enumerate(self.constraints):
            for j, a in con.coefs.items():
                A[i, j] = a
        senses = [con.sense for con in self.constraints]
        b = np.array([con.rhs for con in self.constraints], dtype=np.float64)
        lb = np.array([v.lb for v in self.variables])
        ub = np.array([v.ub for v in self.variables])
        is_int = np.array([v.integer for v in self.variables], dtype=bool)
        return c, A, senses, b, lb, ub, is_int

    def objective_value(self, x):
        return self.constant + sum(a * x[j] for j, a in self.objective.items())

    def max_violation(self, x, integrality=False):
        """Largest constraint, bound (and optionally integrality) violation of ``x``."""
        worst = 0.0
        for con in self.constraints:
            lhs = sum(a * x[j] for j, a in con.coefs.items())
            if con.sense == "<=":
                viol = lhs - con.rhs
            elif con.sense == ">=":
                viol = con.rhs - lhs
            else:
                viol = abs(lhs - con.rhs)
            worst = max(worst, viol)
        for j, v in enumerate(self.variables):
            worst = max(worst, v.lb - x[j], x[j] - v.ub)
            if integrality and v.integer:
                worst = max(worst, abs(x[j] - round(x[j])))
        return worst

    # -- text format --------------------------------------------------------

    def to_lp(self):
        names = [v.name for v in self.variables]

        def terms(coefs):
            return " ".join(f"{'-' if a < 0 else '+'} {abs(a)!r} {names[j]}" for j, a in sorted(coefs.items()))

        lines = ["MAXIMIZE" if self.sense == "max" else "MINIMIZE"]
        obj = terms(self.objective)
        if self.constant:
            obj += f" {'-' if self.constant < 0 else '+'} {abs(self.constant)!r}"
        lines.append(f"  obj: {obj}".rstrip())
        lines.append("SUBJECT TO")
        for con in self.constraints:
            lines.append(f"  {con.name}: {terms(con.coefs)} {con.sense} {con.rhs!r}")
        lines.append("BOUNDS")
        for v in self.variables:
            lines.append(f"  {v.lb!r} <= {v.name} <= {v.ub!r}")
        ints = [v.name for v in self.variables if v.integer]
        if ints:
            lines.append("INTEGER")
            lines.append("  " + " ".join(ints))
        lines.append("END")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_lp(cls, text):
        lines = [ln.strip() for ln in text.splitlines()]
        lines = [ln for ln in lines if ln and not ln.startswith("\\")]
        section = None
        obj_line, con_lines, bounds, ints = None, [], {}, set()
        sense = "min"
        for ln in lines:
            key = ln.upper()
            if key in ("MINIMIZE", "MAXIMIZE"):
                sense = "min" if key == "MINIMIZE" else "max"
                section = "obj"
            elif key == "SUBJECT TO":
                section = "cons"
            elif key == "BOUNDS":
                section = "bounds"
            elif key == "INTEGER":
                section = "int"
            elif key == "END":
                break
            elif section == "obj":
                obj_line = ln
            elif section == "cons":
                con_lines.append(ln)
            elif section == "bounds":
                lo, le1, name, le2, hi = ln.split()
                if le1 != "<=" or le2 != "<=":
                    raise ConfigError(f"bad bounds line: {ln!r}")
                bounds[name] = (float(lo), float(hi))
            elif section == "int":
                ints.update(ln.split())
            else:
                raise ConfigError(f"unexpected line: {ln!r}")
        model = cls()
        index = {}
        for name, (lo, hi) in bounds.items():
            index[name] = model.add_var(lo, hi, name in ints, name)

        def parse_terms(tokens, where):
            coefs, constant = {}, 0.0
            pos = 0
            while pos < len(tokens):
                sign = tokens[pos]
                if sign not in ("+", "-"):
                    raise ConfigError(f"expected sign in {where}: {tokens[pos]!r}")
                value = float(tokens[pos + 1]) * (-1.0 if sign == "-" else 1.0)
                if pos + 2 < len(tokens) and tokens[pos + 2] not in ("+", "-"):
                    name = tokens[pos + 2]
                    if name not in index:
                        raise ConfigError(f"variable {name!r} has no bounds entry")
                    coefs[index[name]] = coefs.get(index[name], 0.0) + value
                    pos += 3
                else:
                    constant += value
                    pos += 2
            return coefs, constant

        if obj_line is not None:
            label, _, body = obj_line.partition(":")
            coefs, constant = parse_terms(body.split(), "objective")
            model.set_objective(coefs, sense, constant)
        for ln in con_lines:
            name, _, body = ln.partition(":")
            tokens = body.split()
            coefs, _ = parse_terms(tokens[:-2], name)
            model.add_constraint(coefs, tokens[-2], float(tokens[-1]), name.strip())
        return model


@dataclass
class MilpSolution:
    status: str
    x: np.ndarray | None = None
    objective: float = math.nan
    bound: float = math.nan
    nodes: int = 0
    iterations: int = 0


# -- LP ---------------------------------------------------------------------


class _Simplex:
    """Bounded-variable primal simplex on ``A x = b, lo <= x <= hi``, minimizing ``c x``."""

    def __init__(self, A, b, lo, hi):
        self.A = A
        self.b = b
        self.lo = lo
        self.hi = hi
        self.iterations = 0

    def run(self, c, basis, at_upper):
        A, lo, hi = self.A, self.lo, self.hi
        m, N = A.shape
        bland_after = 3 * (m + N)
        max_iter = 50 * (m + N) + 1000
        pivots = 0
        nonbasic = np.ones(N, dtype=bool)
        nonbasic[basis] = False
        while True:
            x = np.where(at_upper, hi, lo)
            x[basis] = 0.0
            with warnings.catch_warnings():
                warnings.simplefilter("error", LinAlgWarning)
                try:
                    lu = lu_factor(A[:, basis], check_finite=False)
                except (LinAlgWarning, ValueError):
                    raise NumericalFailure("singular basis matrix") from None
            xB = lu_solve(lu, self.b - A @ x, check_finite=False)
            y = lu_solve(lu, c[basis], trans=1, check_finite=False)
            if not (np.all(np.isfinite(xB)) and np.all(np.isfinite(y))):
                raise NumericalFailure("non-finite basic solution")
            x[basis] = xB
            d = c - A.T @ y
            movable = nonbasic & (hi > lo)
            eligible = movable & ((~at_upper & (d < -COST_TOL)) | (at_upper & (d > COST_TOL)))
            if not eligible.any():
                return x, basis, at_upper
            if pivots >= max_iter:
                raise NumericalFailure("simplex iteration limit reached")
            bland = pivots >= bland_after
            cand = np.flatnonzero(eligible)
            j = int(cand[0]) if bland else int(cand[np.argmax(np.abs(d[cand]))])
            direction = -1.0 if at_upper[j] else 1.0
            delta = direction * lu_solve(lu, A[:, j], check_finite=False)

            step = hi[j] - lo[j]
            leave = -1
            lo_b, hi_b = lo[basis], hi[basis]
            ratios = np.full(m, np.inf)
            dec = delta > PIVOT_TOL
            inc = delta < -PIVOT_TOL
            ratios[dec] = (xB[dec] - lo_b[dec]) / delta[dec]
            with np.errstate(invalid="ignore"):
                ratios[inc] = (hi_b[inc] - xB[inc]) / -delta[inc]
            ratios = np.maximum(ratios, 0.0)
            best = ratios.min() if m else np.inf
            if best < step:
                ties = np.flatnonzero(ratios <= best + 1e-12)
                if bland:
                    leave = int(ties[np.argmin(np.asarray(basis)[ties])])
                else:
                    leave = int(ties[np.argmax(np.abs(delta[ties]))])
                step = best
            if not math.isfinite(step):
                raise NumericalFailure("unbounded direction in a boxed problem")
            if leave < 0:
                at_upper[j] = not at_upper[j]
            else:
                if abs(delta[leave]) < PIVOT_TOL:
                    raise NumericalFailure("pivot element below tolerance")
                out = basis[leave]
                at_upper[out] = bool(delta[leave] < 0)
                nonbasic[out] = True
                nonbasic[j] = False
                at_upper[j] = False
                basis[leave] = j
            pivots += 1
            self.iterations += 1


def _lp_arrays(model):
    c, A, senses, b, lb, ub, is_int = model.arrays()
    if model.sense == "max":
        c = -c
    return c, A, senses, b, lb, ub, is_int


def _solve_lp_arrays(c, A, senses, b, lb, ub):
    """Returns ``(x, objective, iterations)`` or ``(None, inf, iterations)`` if infeasible."""
    m, n = A.shape
    if np.any(lb > ub):
        return None, math.inf, 0
    slack_cols = []
    for i, s in enumerate(senses):
        if s == "<=":
            slack_cols.append((i, 1.0))
        elif s == ">=":
            slack_cols.append((i, -1.0))
    ns = len(slack_cols)
    base = np.zeros((m, n + ns))
    base[:, :n] = A
    for k, (i, sign) in enumerate(slack_cols):
        base[i, n + k] = sign
    lo = np.concatenate([lb, np.zeros(ns)])
    hi = np.concatenate([ub, np.full(ns, np.inf)])
    resid = b - A @ lb
    # Crash basis: a slack whose sign matches the residual starts basic;
    # remaining rows get an artificial variable.
    basis = []
    needs_art = np.ones(m, dtype=bool)
    for k, (i, sign) in enumerate(slack_cols):
        if resid[i] * sign >= 0:
            basis.append(n + k)
            needs_art[i] = False
        else:
            basis.append(None)
    sigma = np.where(resid < 0, -1.0, 1.0)
    full = np.hstack([base, np.diag(sigma)])
    N = n + ns + m
    lo = np.concatenate([lo, np.zeros(m)])
    hi = np.concatenate([hi, np.where(needs_art, np.inf, 0.0)])
    row_basis = [n + ns + i for i in range(m)]
    for k, (i, _) in enumerate(slack_cols):
        if basis[k] is not None:
            row_basis[i] = basis[k]
    simplex = _Simplex(full, b, lo, hi)
    basis = row_basis
    at_upper = np.zeros(N, dtype=bool)

    phase1 = np.zeros(N)
    phase1[n + ns:] = 1.0
    x, basis, at_upper = simplex.run(phase1, basis, at_upper)
    # Absolute tolerance: the strict big-M margins are small multiples of
    # the right-hand sides, so a relative test would accept infeasible rows.
    if x[n + ns:].sum() > FEAS_TOL:
        return None, math.inf, simplex.iterations
    hi[n + ns:] = 0.0
    cost = np.zeros(N)
    cost[:n] = c
    x, basis, at_upper = simplex.run(cost, basis, at_upper)
    xs = x[:n]
    return xs, float(c @ xs), simplex.iterations


def solve_lp(model, lb=None, ub=None):
    """Solve the LP relaxation of ``model`` (integrality ignored).

    ``lb``/``ub`` optionally override the variable bounds.
    """
    c, A, senses, b, mlb, mub, _ = _lp_arrays(model)
    lb = mlb if lb is None else np.asarray(lb, dtype=np.float64)
    ub = mub if ub is None else np.asarray(ub, dtype=np.float64)
    x, obj, iters = _solve_lp_arrays(c, A, senses, b, lb, ub)
    if x is None:
        return MilpSolution(INFEASIBLE, iterations=iters)
    value = model.constant + (-obj if model.sense == "max" else obj)
    return MilpSolution(OPTIMAL, x, value, value, 0, iters)


# -- MILP -------------------------------------------------------------------


@dataclass(frozen=True)
class SolverLimits:
    node_limit: int = 200_000
    time_limit: float | None = None
    gap: float = GAP_TOL


def _most_fractional(x, is_int):
    frac = np.abs(x - np.round(x))
    frac[~is_int] = 0.0
    j = int(np.argmax(frac))
    return j if frac[j] > INT_TOL else -1


def solve_milp(model, limits=SolverLimits()):
    """Branch and bound over the integer variables of ``model``."""
    c, A, senses, b, lb, ub, is_int = _lp_arrays(model)
    started = time.monotonic()
    incumbent, inc_val = None, math.inf
    heap = []
    seq = 0
    nodes = 0
    iters = 0
    dive = (lb.copy(), ub.copy(), -math.inf)
    hit_limit = False

    def cutoff():
        return inc_val - limits.gap * max(1.0, abs(inc_val))

    while True:
        if dive is not None:
            node_lb, node_ub, bound = dive
            dive = None
        elif heap:
            bound, _, node_lb, node_ub = heapq.heappop(heap)
        else:
            break
        if incumbent is not None and bound >= cutoff():
            continue
        if nodes >= limits.node_limit or (
            limits.time_limit is not None and time.monotonic() - started > limits.time_limit
        ):
            heapq.heappush(heap, (bound, seq, node_lb, node_ub))
            hit_limit = True
            break
        x, obj, it = _solve_lp_arrays(c, A, senses, b, node_lb, node_ub)
        nodes += 1
        iters += it
        if x is None or (incumbent is not None and obj >= cutoff()):
            continue
        # Round-off can leave x a hair outside its box; branching on such a
        # value would produce an empty child.
        x = np.clip(x, node_lb, node_ub)
        j = _most_fractional(x, is_int)
        if j < 0:
            incumbent, inc_val = x, obj
            continue
        floor_ub = node_ub.copy()
        floor_ub[j] = math.floor(x[j])
        ceil_lb = node_lb.copy()
        ceil_lb[j] = math.ceil(x[j])
        dive = (node_lb, floor_ub, obj)
        heapq.heappush(heap, (obj, seq, ceil_lb, node_ub))
        seq += 1

    open_bounds = [h[0] for h in heap if incumbent is None or h[0] < cutoff()]
    if hit_limit:
        bound = min(open_bounds + ([inc_val] if incumbent is not None else []), default=math.inf)
    else:
        bound = inc_val
    sign = -1.0 if model.sense == "max" else 1.0
    to_user = lambda v: model.constant + sign * v  # noqa: E731
    if hit_limit:
        return MilpSolution(TIME_LIMIT, incumbent, to_user(inc_val) if incumbent is not None else math.nan,
                            to_user(bound), nodes, iters)
    if incumbent is None:
        return MilpSolution(INFEASIBLE, nodes=nodes, iterations=iters)
    return MilpSolution(OPTIMAL, incumbent, to_user(inc_val), to_user(bound), nodes, iters)


# -- linear classifier enumeration -----------------------------------------


def big_m(X, box):
    """Row constants strictly above ``sup_{|beta|_inf <= box} |x' beta| = box * |x|_1``."""
    return 1.01 * np.maximum(box * np.abs(X).sum(axis=1), 1e-9)


def strict_margin(C):
    return 1e-6 * C


def enumerate_linear_classifiers(X, box=10.0, max_rows=14):
    """All decision vectors realizable as ``1{x' beta >= 0}`` with ``beta`` in the box.

    A labeling counts as realizable when some ``beta`` in ``[-box, box]^d``
    gives ``x_j' beta >= 0`` on rows labelled 1 and ``x_j' beta <= -eps_j``
    on rows labelled 0, with the same margins used by the MILP builders.
    Feasibility is certified with scipy's HiGHS LP solver, independently of
    :func:`solve_lp`. Partial labelings are checked depth-first so infeasible
    prefixes are pruned.
    """
    from scipy.optimize import linprog

    X = np.asarray(X, dtype=np.float64)
    m, d = X.shape
    if m > max_rows:
        raise TooLarge(f"enumeration is limited to {max_rows} rows, got {m}")
    eps = strict_margin(big_m(X, box))
    bounds = [(-box, box)] * d

    def witness(labels):
        """A beta realizing ``labels`` on the leading rows, or None."""
        k = len(labels)
        lab = np.asarray(labels)
        # rows labelled 1: -x'beta <= 0 ; rows labelled 0: x'beta <= -eps
        sign = np.where(lab == 1, -1.0, 1.0)
        A_ub = sign[:, None] * X[:k]
        b_ub = np.where(lab == 1, 0.0, -eps[:k])
        res = linprog(np.zeros(d), A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
        return res.x if res.status == 0 else None

    out = []

    def extend(labels, beta):
        k = len(labels)
        if k == m:
            out.append(np.array(labels, dtype=np.int8))
            return
        score = X[k] @ beta
        for v in (0, 1):
            nxt = labels + [v]
            # The parent's witness settles one child without another LP.
            if (v == 1 and score >= 0.0) or (v == 0 and score <= -eps[k]):
                extend(nxt, beta)
            else:
                child = witness(nxt)
                if child is not None:
                    extend(nxt, child)

    extend([], np.zeros(d))
    return out

"""Datasets, decision rules, CSV ingestion and train/test splitting."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ._seeding import SPLIT, derive_rng
from .config import read_toml
from .errors import (
    ConfigError,
    DataError,
    DegenerateSplit,
    DimensionMismatch,
    EmptyFile,
    MissingColumn,
    MissingScoreColumn,
    NonNumericFeature,
    SingleGroup,
    TooManyGroups,
)

GROUP_NAMES = ("r", "b")


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Rows of (covariates, outcome, group) plus optional score columns.

    ``X`` always carries the intercept in column 0. ``groups`` holds 0 for
    group r and 1 for group b; ``group_labels`` records the original labels
    in that order.
    """

    X: np.ndarray
    y: np.ndarray
    groups: np.ndarray
    feature_names: tuple = ()
    scores: Mapping[str, np.ndarray] = field(default_factory=dict)
    group_labels: tuple = GROUP_NAMES
    outcome_name: str = "y"
    group_name: str = "g"

    def __post_init__(self):
        X = _frozen(self.X, np.float64)
        if X.ndim != 2:
            raise DataError("covariates must be a 2-d array")
        n, d = X.shape
        if n < 1:
            raise DataError("dataset is empty")
        y = _frozen(self.y, np.float64).reshape(-1)
        groups = _frozen(self.groups, np.int8).reshape(-1)
        if y.shape[0] != n or groups.shape[0] != n:
            raise DataError("all columns must have the same length")
        if not np.all(X[:, 0] == 1.0):
            raise DataError("first covariate column must be identically 1")
        if not np.all((groups == 0) | (groups == 1)):
            raise DataError("group codes must be 0 (r) or 1 (b)")
        if groups.min() == groups.max():
            raise SingleGroup("both groups must be represented")
        names = tuple(self.feature_names) or ("intercept",) + tuple(f"x{j}" for j in range(1, d))
        if len(names) != d:
            raise DataError("feature_names does not match the number of columns")
        scores = {}
        for key, col in self.scores.items():
            col = _frozen(col, np.float64).reshape(-1)
            if col.shape[0] != n:
                raise DataError(f"score column {key!r} has the wrong length")
            scores[key] = col
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "group_labels", tuple(str(g) for g in self.group_labels))

    @classmethod
    def from_arrays(cls, features, y, groups, *, feature_names=None, scores=None,
                    group_labels=GROUP_NAMES, add_intercept=True, **kwargs):
        """Build a dataset from raw feature columns.

        ``groups`` may hold 0/1 codes or the labels listed in ``group_labels``.
        """
        features = np.asarray(features, dtype=np.float64)
        if features.ndim == 1:
            features = features[:, None]
        n = len(y)
        if features.shape[1] == 0:
            features = features.reshape(n, 0)
        names = list(feature_names) if feature_names is not None else [f"x{j + 1}" for j in range(features.shape[1])]
        if add_intercept:
            features = np.column_stack([np.ones(n), features])
            names = ["intercept"] + names
        g = np.asarray(groups)
        if g.dtype.kind in "US" or g.dtype == object:
            lookup = {str(lab): code for code, lab in enumerate(group_labels)}
            try:
                g = np.array([lookup[str(v)] for v in g], dtype=np.int8)
            except KeyError as exc:
                raise DataError(f"unknown group label {exc.args[0]!r}") from None
        return cls(features, y, g, tuple(names), dict(scores or {}), tuple(group_labels), **kwargs)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    @property
    def n_r(self):
        return int(np.count_nonzero(self.groups == 0))

    @property
    def n_b(self):
        return int(np.count_nonzero(self.groups == 1))

    def take(self, idx):
        idx = np.asarray(idx)
        return Dataset(
            self.X[idx], self.y[idx], self.groups[idx], self.feature_names,
            {k: v[idx] for k, v in self.scores.items()}, self.group_labels,
            self.outcome_name, self.group_name,
        )

    def column(self, name):
        """Values of a score column or a named feature."""
        if name in self.scores:
            return self.scores[name]
        if name in self.feature_names:
            return self.X[:, self.feature_names.index(name)]
        raise MissingScoreColumn(f"no score or feature column named {name!r}")


# -- decision rules ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LinearClassifier:
    """Decides 1 iff ``beta @ x >= 0`` (ties decide 1)."""

    beta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "beta", _frozen(self.beta, np.float64).reshape(-1))

    def decide(self, data):
        if data.d != self.beta.shape[0]:
            raise DimensionMismatch(f"classifier has {self.beta.shape[0]} coefficients, data has {data.d} columns")
        return (data.X @ self.beta >= 0.0).astype(np.int8)

    def describe(self):
        return "linear(" + ",".join(f"{b:.4g}" for b in self.beta) + ")"


@dataclass(frozen=True, eq=False)
class ScoreThreshold:
    """Decides 1 iff ``scorer.score(x) > threshold``.

    ``degenerate`` marks thresholds that select no training row.
    """

    scorer: object
    threshold: float
    degenerate: bool = False

    def decide(self, data):
        return (self.scorer.score(data) > self.threshold).astype(np.int8)

    def describe(self):
        return f"{self.scorer.method}>{self.threshold:.4g}"


@dataclass(frozen=True)
class ColumnThreshold:
    """Decides 1 iff the named score (or feature) column exceeds ``threshold``."""

    column: str
    threshold: float

    @classmethod
    def at_quantile(cls, data, column, quantile):
        """Threshold at the lower empirical ``quantile`` of ``column``."""
        values = data.column(column)
        return cls(column, float(np.quantile(values, quantile, method="lower")))

    def decide(self, data):
        return (data.column(self.column) > self.threshold).astype(np.int8)

    def describe(self):
        return f"{self.column}>{self.threshold:.4g}"


@dataclass(frozen=True)
class Constant:
    decision: int

    def __post_init__(self):
        if self.decision not in (0, 1):
            raise ValueError("constant decision must be 0 or 1")

    def decide(self, data):
        return np.full(data.n, self.decision, dtype=np.int8)

    def describe(self):
        return f"constant({self.decision})"


def evaluate(rule, data):
    """Binary decision vector of ``rule`` on every row of ``data``."""
    return rule.decide(data)


# -- splitting --------------------------------------------------------------


@dataclass(frozen=True)
class SplitPlan:
    seed: int
    beta: float = 0.5
    k: int = 0

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ConfigError("split fraction must lie in (0, 1)")


def split_indices(n, plan):
    """Sorted (train, test) row indices for round ``plan.k``."""
    m = math.floor(plan.beta * n)
    if n < 2 or m < 1 or m > n - 1:
        raise DegenerateSplit(f"split fraction {plan.beta} leaves an empty side for n={n}")
    perm = derive_rng(plan.seed, plan.k, SPLIT).permutation(n)
    return np.sort(perm[:m]), np.sort(perm[m:])


def split_sample(data, plan):
    """Uniformly random train/test partition of sizes floor(beta*n), n - floor(beta*n)."""
    train_idx, test_idx = split_indices(data.n, plan)
    out = []
    for idx in (train_idx, test_idx):
        g = data.groups[idx]
        if g.min() == g.max():
            raise DegenerateSplit("a split side contains only one group")
        out.append(data.take(idx))
    return tuple(out)


# -- CSV --------------------------------------------------------------------


@dataclass
class Schema:
    """Column roles for :func:`load_csv`.

    ``group_labels`` maps the canonical names ``r`` and ``b`` to raw labels;
    when omitted, the sorted distinct labels are assigned to r then b.
    ``intercept`` names an existing constant column to use instead of
    prepending one.
    """

    outcome: str
    group: str
    features: Sequence[str]
    scores: Sequence[str] = ()
    group_labels: Mapping[str, str] | None = None
    intercept: str | None = None

    @classmethod
    def from_mapping(cls, raw):
        try:
            outcome, group = raw["outcome"], raw["group"]
        except KeyError as exc:
            raise ConfigError(f"schema is missing key {exc.args[0]!r}") from None
        labels = raw.get("group_labels")
        if labels is not None and set(labels) != {"r", "b"}:
            raise ConfigError("schema group_labels must have exactly the keys 'r' and 'b'")
        return cls(
            outcome=str(outcome),
            group=str(group),
            features=[str(f) for f in raw.get("features", [])],
            scores=[str(s) for s in raw.get("scores", [])],
            group_labels={k: str(v) for k, v in labels.items()} if labels else None,
            intercept=raw.get("intercept"),
        )

    @classmethod
    def from_toml(cls, path):
        return cls.from_mapping(read_toml(path))

    def to_mapping(self):
        out = {"outcome": self.outcome, "group": self.group, "features": list(self.features),
               "scores": list(self.scores)}
        if self.intercept:
            out["intercept"] = self.intercept
        if self.group_labels:
            out["group_labels"] = dict(self.group_labels)
        return out

    @classmethod
    def for_dataset(cls, data):
        return cls(
            outcome=data.outcome_name,
            group=data.group_name,
            features=list(data.feature_names[1:]),
            scores=list(data.scores),
            group_labels={"r": data.group_labels[0], "b": data.group_labels[1]},
        )


def _parse_number(text, column, row):
    try:
        value = float(text)
    except ValueError:
        raise NonNumericFeature(f"column {column!r}, data row {row}: {text!r} is not numeric") from None
    if not math.isfinite(value):
        raise NonNumericFeature(f"column {column!r}, data row {row}: non-finite value {text!r}")
    return value


def load_csv(path, schema):
    """Read a UTF-8 CSV file into a validated :class:`Dataset`."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise EmptyFile(f"{path} has no header row")
        rows = [r for r in reader if r]
    if not rows:
        raise EmptyFile(f"{path} has no data rows")
    position = {name: j for j, name in enumerate(header)}
    numeric = [schema.outcome, *schema.features, *schema.scores]
    if schema.intercept:
        numeric.append(schema.intercept)
    for name in [schema.group, *numeric]:
        if name not in position:
            raise MissingColumn(f"column {name!r} not found in {path}")
    for i, r in enumerate(rows, start=1):
        if len(r) != len(header):
            raise DataError(f"data row {i} has {len(r)} fields, header has {len(header)}")

    def numbers(name):
        j = position[name]
        return np.array([_parse_number(r[j], name, i) for i, r in enumerate(rows, start=1)])

    raw_groups = [r[position[schema.group]] for r in rows]
    distinct = sorted(set(raw_groups))
    if len(distinct) < 2:
        raise SingleGroup(f"group column {schema.group!r} has a single label")
    if len(distinct) > 2:
        raise TooManyGroups(f"group column {schema.group!r} has {len(distinct)} labels: {distinct}")
    if schema.group_labels:
        labels = (schema.group_labels["r"], schema.group_labels["b"])
        if set(labels) != set(distinct):
            raise DataError(f"group labels {labels} do not match the data labels {distinct}")
    else:
        labels = tuple(distinct)

    feats = [numbers(f) for f in schema.features]
    names = list(schema.features)
    n = len(rows)
    if schema.intercept:
        const = numbers(schema.intercept)
        if not np.all(const == 1.0):
            raise DataError(f"declared intercept column {schema.intercept!r} is not identically 1")
        X = np.column_stack([const, *feats]) if feats else const[:, None]
        names = [schema.intercept] + names
    else:
        X = np.column_stack([np.ones(n), *feats]) if feats else np.ones((n, 1))
        names = ["intercept"] + names
    code = {labels[0]: 0, labels[1]: 1}
    return Dataset(
        X, numbers(schema.outcome), np.array([code[g] for g in raw_groups], dtype=np.int8),
        tuple(names), {s: numbers(s) for s in schema.scores}, labels,
        outcome_name=schema.outcome, group_name=schema.group,
    )


def write_csv(data, path):
    """Write ``data`` so that :func:`load_csv` with :meth:`Schema.for_dataset` restores it exactly."""
    header = [data.group_name, data.outcome_name, *data.feature_names[1:], *data.scores]
    cols = [data.y, *(data.X[:, j] for j in range(1, data.d)), *data.scores.values()]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(data.n):
            w.writerow([data.group_labels[data.groups[i]], *(repr(float(c[i])) for c in cols)])

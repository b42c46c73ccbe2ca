"""Utility specifications and plug-in estimates of group-level utilities.

Group utilities have the ratio form ``E[u | G=g] / E[w | G=g]``. On a sample
they are estimated as ``mean(u * 1{G=g}) / mean(w * 1{G=g})``; the
denominators are the nuisance means ``theta``.

Column layout used throughout (see :func:`utility_columns`): for each
functional (accuracy, then fairness unless shared) four ``u`` columns
followed by four ``w`` columns, cells ordered ``(t, g)`` =
``(0, r), (0, b), (1, r), (1, b)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import GROUP_NAMES
from .errors import ConfigError, DegenerateCell, InvalidUtility

CELLS = ((0, 0), (0, 1), (1, 0), (1, 1))


class Utility:
    """A (u, w) pair evaluated on whole arrays of rows."""

    name = "utility"
    bounded = False

    def u(self, X, y, d):
        raise NotImplementedError

    def w(self, X, y, d):
        raise NotImplementedError

    def params(self):
        return {}

    def __eq__(self, other):
        return type(self) is type(other) and self.params() == other.params()

    def __hash__(self):
        return hash((type(self).__name__, tuple(sorted(self.params().items()))))

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.params().items())
        return f"{type(self).__name__}({args})"


class ClassificationRate(Utility):
    """Share of correct predictions: u = 1{y = d}, w = 1."""

    name = "classification"
    bounded = True

    def u(self, X, y, d):
        return (y == d).astype(np.float64)

    def w(self, X, y, d):
        return np.ones(len(y))


class Calibration(Utility):
    """Mean outcome among those selected: u = y 1{d = 1}, w = 1{d = 1}."""

    name = "calibration"

    def u(self, X, y, d):
        return y * (d == 1)

    def w(self, X, y, d):
        return (d == 1).astype(np.float64)


class FalsePositiveRate(Utility):
    """u = 1{y = 0, d = 1}, w = 1{y = 0}."""

    name = "fpr"
    bounded = True

    def u(self, X, y, d):
        return ((y == 0) & (d == 1)).astype(np.float64)

    def w(self, X, y, d):
        return (y == 0).astype(np.float64)


@dataclass(eq=False)
class Profit(Utility):
    """Revenue from a posted price.

    Decision 1 offers the good at ``price`` and decision 0 offers nothing;
    the firm earns the offered price when the willingness to pay ``y`` is at
    least that price.
    """

    price: float = 1.0
    name = "profit"

    def __post_init__(self):
        if not self.price > 0:
            raise ConfigError("profit price must be positive")

    def u(self, X, y, d):
        offer = self.price * d
        return np.where((d == 1) & (y >= offer), offer, 0.0)

    def w(self, X, y, d):
        return np.ones(len(y))

    def params(self):
        return {"price": self.price}


@dataclass(eq=False)
class Custom(Utility):
    """User-supplied vectorized ``u(X, y, d)`` and ``w(X, y, d)``."""

    u_fn: Callable = None
    w_fn: Callable = None
    label: str = "custom"

    name = "custom"

    def u(self, X, y, d):
        return np.asarray(self.u_fn(X, y, d), dtype=np.float64)

    def w(self, X, y, d):
        return np.asarray(self.w_fn(X, y, d), dtype=np.float64)

    def params(self):
        return {"label": self.label, "u": id(self.u_fn), "w": id(self.w_fn)}


_BUILTIN = {
    "classification": ClassificationRate,
    "calibration": Calibration,
    "fpr": FalsePositiveRate,
    "false-positive-rate": FalsePositiveRate,
    "profit": Profit,
}


def utility_from_name(name, **params):
    try:
        cls = _BUILTIN[name]
    except KeyError:
        raise ConfigError(f"unknown utility {name!r}; choose from {sorted(_BUILTIN)}") from None
    try:
        return cls(**params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for utility {name!r}: {exc}") from None


@dataclass(frozen=True)
class UtilitySpec:
    """Accuracy and fairness utilities; fairness defaults to the accuracy one."""

    accuracy: Utility
    fairness: Utility | None = None

    def __post_init__(self):
        if self.fairness is None:
            object.__setattr__(self, "fairness", self.accuracy)

    @property
    def shared(self):
        return self.fairness == self.accuracy

    def describe(self):
        if self.shared:
            return repr(self.accuracy)
        return f"accuracy={self.accuracy!r}, fairness={self.fairness!r}"


@dataclass(frozen=True)
class NuisanceEstimate:
    """Normalization means; ``theta_A[t, g]`` and ``theta_F[t, g]``."""

    theta_A: np.ndarray
    theta_F: np.ndarray
    shared: bool = True

    @property
    def vector(self):
        """Components ordered (0r, 1r, 0b, 1b), accuracy then fairness when not shared."""
        order = [(0, 0), (1, 0), (0, 1), (1, 1)]
        parts = [self.theta_A[c] for c in order]
        if not self.shared:
            parts += [self.theta_F[c] for c in order]
        return np.array(parts)


@dataclass(frozen=True)
class UtilityEstimates:
    """``A[t, g]`` and ``F[t, g]``: t = 0 status quo, 1 candidate; g = 0 r, 1 b."""

    A: np.ndarray
    F: np.ndarray

    def unfairness(self, t):
        return abs(self.F[t, 0] - self.F[t, 1])


@dataclass(frozen=True)
class ColumnLayout:
    shared: bool
    n_cols: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "n_cols", 8 if self.shared else 16)


def _checked(values, what, n):
    values = np.broadcast_to(np.asarray(values, dtype=np.float64), (n,))
    if not np.all(np.isfinite(values)) or np.any(values < 0):
        raise InvalidUtility(f"{what} must return finite nonnegative values")
    return values


def utility_columns(data, d0, d1, spec):
    """Per-row matrix of group-masked u and w values (see module docstring)."""
    n = data.n
    blocks = [spec.accuracy] if spec.shared else [spec.accuracy, spec.fairness]
    cols = []
    for ut in blocks:
        us, ws = [], []
        for t, g in CELLS:
            dec = d0 if t == 0 else d1
            mask = data.groups == g
            us.append(_checked(ut.u(data.X, data.y, dec), f"{ut.name} u", n) * mask)
            ws.append(_checked(ut.w(data.X, data.y, dec), f"{ut.name} w", n) * mask)
        cols.extend(us + ws)
    return np.column_stack(cols), ColumnLayout(spec.shared)


def ratios_from_means(means, layout):
    """Split column means into (theta_A, theta_F, A, F), each shaped (..., 2, 2).

    Cells with a non-positive normalization give NaN utilities.
    """
    means = np.asarray(means, dtype=np.float64)
    lead = means.shape[:-1]

    def block(offset):
        u = means[..., offset:offset + 4].reshape(lead + (2, 2))
        w = means[..., offset + 4:offset + 8].reshape(lead + (2, 2))
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(w > 0, u / np.where(w > 0, w, 1.0), np.nan)
        return w, ratio

    theta_A, A = block(0)
    if layout.shared:
        return theta_A, theta_A, A, A
    theta_F, F = block(8)
    return theta_A, theta_F, A, F


def _raise_if_degenerate(theta_A, theta_F):
    for label, theta in (("A", theta_A), ("F", theta_F)):
        for t, g in CELLS:
            if not theta[t, g] > 0:
                raise DegenerateCell((t, GROUP_NAMES[g]), label)


def estimate_theta(test, a0, a1, spec):
    """Sample means of ``w(X, Y, a_t(X)) 1{G = g}`` per cell."""
    M, layout = utility_columns(test, a0.decide(test), a1.decide(test), spec)
    theta_A, theta_F, _, _ = ratios_from_means(M.mean(axis=0), layout)
    _raise_if_degenerate(theta_A, theta_F)
    return NuisanceEstimate(theta_A, theta_F, spec.shared)


def estimate_utilities(test, a0, a1, spec, theta=None):
    """Plug-in estimates of the group utilities for the status quo and candidate."""
    if theta is None:
        theta = estimate_theta(test, a0, a1, spec)
    _raise_if_degenerate(theta.theta_A, theta.theta_F)
    M, layout = utility_columns(test, a0.decide(test), a1.decide(test), spec)
    means = M.mean(axis=0)
    offset = 0 if layout.shared else 8
    A = means[0:4].reshape(2, 2) / theta.theta_A
    F = means[offset:offset + 4].reshape(2, 2) / theta.theta_F
    return UtilityEstimates(A, F)


def point_estimates(means, layout):
    """UtilityEstimates from column means, raising :class:`DegenerateCell` when needed."""
    theta_A, theta_F, A, F = ratios_from_means(means, layout)
    _raise_if_degenerate(theta_A, theta_F)
    return NuisanceEstimate(theta_A, theta_F, layout.shared), UtilityEstimates(A, F)


def diagnostic_covariance(test, a0, a1, spec):
    """Sample covariance of the per-row normalization and utility terms.

    Informational only; no threshold is applied to it.
    """
    M, _ = utility_columns(test, a0.decide(test), a1.decide(test), spec)
    keep = M.std(axis=0) > 0
    return np.cov(M[:, keep].T)

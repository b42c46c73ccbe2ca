"""Exception hierarchy.

Every error raised on purpose by the library derives from
:class:`FairImproveError`. The CLI maps the three top-level families onto
exit codes: :class:`ConfigError` -> 2, :class:`DataError` -> 3, anything
else -> 4.
"""


class FairImproveError(Exception):
    """Base class for all library errors."""


class ConfigError(FairImproveError):
    """Invalid or missing configuration."""


class DataError(FairImproveError):
    """Input data violates a precondition."""


class EmptyFile(DataError):
    pass


class MissingColumn(DataError):
    pass


class NonNumericFeature(DataError):
    pass


class GroupCountError(DataError):
    """The group column does not carry exactly two labels."""


class SingleGroup(GroupCountError):
    pass


class TooManyGroups(GroupCountError):
    pass


class DimensionMismatch(DataError):
    pass


class MissingScoreColumn(DataError):
    pass


class DegenerateSplit(DataError):
    pass


class InvalidUtility(DataError):
    """A utility or normalization function returned a negative or non-finite value."""


class DegenerateCell(DataError):
    """A normalization mean is not strictly positive.

    ``cell`` is ``(t, g)`` with ``t`` in {0, 1} and ``g`` in {"r", "b"}.
    """

    def __init__(self, cell, functional="A"):
        self.cell = cell
        self.functional = functional
        super().__init__(f"degenerate normalization for {functional} cell t={cell[0]}, g={cell[1]}")


class SelectionFailure(FairImproveError):
    """The selection rule could not produce a candidate for a round."""


class RankDeficient(SelectionFailure):
    pass


class NoConvergence(SelectionFailure):
    pass


class Infeasible(SelectionFailure):
    pass


class TimeLimit(SelectionFailure):
    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


class NumericalFailure(FairImproveError):
    pass


class TooLarge(FairImproveError):
    pass


class EmptyCache(FairImproveError):
    pass


class AllRoundsFailed(FairImproveError):
    pass

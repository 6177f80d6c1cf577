"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command-line runner:
2 for configuration problems, 3 for numerical failures and 4 when a
mathematical hypothesis of a procedure is observed to fail.
"""


class AbcLabError(Exception):
    """Base class for all package errors."""

    exit_code = 3


class ConfigInvalid(AbcLabError):
    exit_code = 2


class DimensionMismatch(AbcLabError):
    exit_code = 2


# numerical failures
class GridTooCoarse(AbcLabError):
    exit_code = 3


class NotInvertible(AbcLabError):
    exit_code = 3


class BudgetExceeded(AbcLabError):
    exit_code = 3


class SmallDivisorBreakdown(AbcLabError):
    exit_code = 3


class DivergenceDetected(AbcLabError):
    exit_code = 3


class IterationCap(AbcLabError):
    exit_code = 3


class NotContractive(AbcLabError):
    exit_code = 3


class NoHyperbolicity(AbcLabError):
    exit_code = 3


# hypothesis failures
class Derogatory(AbcLabError):
    exit_code = 4


class NotCommuting(AbcLabError):
    exit_code = 4


class NotConstant(AbcLabError):
    exit_code = 4


class NotGenerating(AbcLabError):
    exit_code = 4


class NotCertified(AbcLabError):
    exit_code = 4


class FoliationNotInvariant(AbcLabError):
    exit_code = 4

"""Exception hierarchy shared by all modules.

Every error carries enough context in its message to locate the offending
entry or frequency; the CLI maps the two base classes to exit codes.
"""


class IlcError(Exception):
    """Base class for all package errors."""


class InputError(IlcError, ValueError):
    """Malformed or inconsistent user input (CLI exit code 2)."""


class NumericalError(IlcError, ArithmeticError):
    """A computation cannot proceed for numerical reasons (CLI exit code 3)."""


class DimensionMismatch(InputError):
    pass


class PoleOnGrid(NumericalError):
    pass


class UnstableClosedLoop(NumericalError):
    pass


class SingularReturnDifference(NumericalError):
    pass


class RankDeficient(NumericalError):
    pass


class ZeroDiagonal(NumericalError):
    pass


class ZeroDiagonalM(ZeroDiagonal):
    pass


class SingularAtAnchor(NumericalError):
    pass


class IllConditioned(NumericalError):
    pass


class FitTooCoarse(NumericalError):
    pass


class CutoffOutOfRange(InputError):
    pass


class NoFeasibleCutoff(NumericalError):
    """No cut-off frequency satisfies the convergence bounds (CLI exit code 5)."""


class ModelMissing(InputError):
    pass


class UnstableOperator(NumericalError):
    pass


class NonContractive(NumericalError):
    pass

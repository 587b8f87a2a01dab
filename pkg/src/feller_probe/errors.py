"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class FellerProbeError(Exception):
    exit_code = 4


class InputError(FellerProbeError, ValueError):
    """Malformed or inconsistent input (dimensions, non-finite values, bad files)."""

    exit_code = 2


class HypothesisError(FellerProbeError):
    """The model does not satisfy the hypotheses an operation requires."""

    exit_code = 3


class ClassError(HypothesisError):
    """The model is not in the SDE class an operation requires."""


class DegenerateVolatilityError(HypothesisError):
    pass


class RegimeError(HypothesisError):
    """A closed form was requested outside the root regime it is valid in."""


class SearchFailure(FellerProbeError):
    """A bounded parameter search hit its cap without success."""

    exit_code = 4


class NumericalError(FellerProbeError):
    """Internal consistency check failed (oracle disagreement, overflow, ...)."""

    exit_code = 4

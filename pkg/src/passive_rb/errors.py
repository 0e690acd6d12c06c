"""Exception hierarchy.  The CLI maps these onto exit codes."""


class PassiveRBError(Exception):
    exit_code = 1


class ConfigError(PassiveRBError):
    exit_code = 2


class ArgumentError(PassiveRBError, ValueError):
    exit_code = 2


class ShapeError(ArgumentError):
    pass


class DataError(PassiveRBError):
    exit_code = 3


class NumericalError(PassiveRBError):
    """Diagnostics failure: rank deficiency, non-convergence, broken invariants."""

    exit_code = 4


class CouplingError(ArgumentError):
    """Requested target irrep does not occur in the tensor product."""


class SizeError(ArgumentError):
    pass


class FitError(NumericalError):
    pass


class DependencyError(PassiveRBError):
    exit_code = 4

"""Exception types shared by all modules.

Every error carries a stable ``code`` string and a ``kind`` that the CLI maps
to an exit status: ``"config"`` -> 2, ``"numerical"`` -> 3.
"""


class ThermometryError(Exception):
    code = "ERROR"
    kind = "numerical"

    def __init__(self, message="", **context):
        super().__init__(message)
        self.context = context


class ConfigInvalidError(ThermometryError):
    code = "CONFIG_INVALID"
    kind = "config"

    def __init__(self, message="", field=None, **context):
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message, field=field, **context)
        self.field = field


class DomainError(ThermometryError, ValueError):
    code = "DOMAIN_ERROR"
    kind = "config"


class AmbiguousRegimeError(ThermometryError):
    code = "AMBIGUOUS_REGIME"
    kind = "config"


class NonconvergentQuadratureError(ThermometryError):
    code = "NONCONVERGENT_QUADRATURE"


class DeltaStateError(ThermometryError):
    code = "DELTA_STATE"
    kind = "config"


class TruncationNotConvergedError(ThermometryError):
    code = "TRUNCATION_NOT_CONVERGED"


class GridTooNarrowError(ThermometryError):
    code = "GRID_TOO_NARROW"


class StepUnderflowError(ThermometryError):
    code = "STEP_UNDERFLOW"


class SingularFIMError(ThermometryError):
    code = "SINGULAR_FIM"


class ZeroInformationError(ThermometryError):
    code = "ZERO_INFORMATION"


class ZeroSignalError(ThermometryError):
    code = "ZERO_SIGNAL"


class OutOfRangeError(ThermometryError):
    code = "OUT_OF_RANGE"


class NoRootError(ThermometryError):
    code = "NO_ROOT"


EXIT_CODES = {"config": 2, "numerical": 3}

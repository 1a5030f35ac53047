"""
Exception hierarchy for qaug.

Every error carries the process exit code the CLI reports for it:
0 success, 2 config error, 3 data error, 4 runtime/numeric error.
"""


class QaugError(Exception):
    """Base class for all library errors."""
    exit_code: int = 4


class ConfigError(QaugError, ValueError):
    exit_code = 2


class ArgumentError(QaugError, ValueError):
    pass


# =============================================================================
# DATA ERRORS
# =============================================================================

class DataError(QaugError):
    exit_code = 3


class FormatError(DataError, ValueError):
    """Bad magic number or malformed file header."""


class LengthError(DataError, ValueError):
    """File shorter than its header promises."""


class ConsistencyError(DataError, ValueError):
    """Image and label files disagree."""


# =============================================================================
# RUNTIME ERRORS
# =============================================================================

class CapacityError(QaugError, ValueError):
    """A size limit was exceeded (qubits, samples)."""


class InsufficientSamplesError(CapacityError, DataError):
    exit_code = 3


class ShapeError(QaugError, ValueError):
    pass


class CacheError(ShapeError):
    """Backward pass given a cache from a different forward."""


class QubitIndexError(QaugError, IndexError):
    pass


class LabelError(QaugError, IndexError):
    """Class label outside 0..n_classes-1."""


class GateSpecError(QaugError, ValueError):
    pass


class NumericError(QaugError, ArithmeticError):
    """NaN or Inf reached a layer boundary."""


class GeneratorNotTrainedError(QaugError):
    pass

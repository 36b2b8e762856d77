"""Exception types shared across the library.

Most are ValueError subclasses so generic callers can catch broad classes,
while tests and the harness can assert on the precise failure kind.
"""


class SemiCoupledError(Exception):
    """Base class for every library-specific error."""


class DimensionError(SemiCoupledError, ValueError):
    """Array shapes or axes are incompatible with the requested operation."""


class ParameterError(SemiCoupledError, ValueError):
    """A numeric argument is outside its legal range."""


class LabelError(SemiCoupledError, ValueError):
    """A class label is outside the valid index range."""


class ContractError(SemiCoupledError, ValueError):
    """A structural precondition was violated (wrong node kind, bad lengths)."""


class StateError(SemiCoupledError, ValueError):
    """A recurrent state object does not match the network it is used with."""


class ConfigError(SemiCoupledError, ValueError):
    """An experiment or schedule configuration is invalid."""


class GenerationError(SemiCoupledError, ValueError):
    """A synthetic-data request cannot be satisfied (e.g. no feasible start)."""


class DegenerateInputError(SemiCoupledError, ValueError):
    """Input is degenerate for the operation (constant field, batch of one)."""


class NumericError(SemiCoupledError, FloatingPointError):
    """A forward computation produced a non-finite value."""

"""Exception types shared across the package."""


class DimensionMismatchError(ValueError):
    """A vector or index does not match the model's site count."""


class UnsupportedTopologyError(ValueError):
    """Requested lattice dimensions would produce a degenerate topology."""


class NoValidMoveError(RuntimeError):
    """The constraint set admits no exchange move (n = 0 or n = N)."""


class InfeasibleWalkError(ValueError):
    """Requested walk length exceeds what the constraint set allows."""


class NumericalError(RuntimeError):
    """A linear-algebra routine failed beyond recoverable jitter."""


class StateSpaceTooLargeError(ValueError):
    """Exact enumeration was refused because the state space is too big."""


class TraceTooShortError(ValueError):
    """An energy trace is shorter than the operation requires."""


class ConfigError(ValueError):
    """An experiment configuration failed validation."""

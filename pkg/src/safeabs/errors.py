"""Exception hierarchy shared across the package."""


class SafeAbsError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(SafeAbsError):
    """A run configuration is malformed or inconsistent."""


class OutOfRangeError(SafeAbsError):
    """A point lies too far outside a lattice or input box to be quantized."""


class EmptyInteriorError(SafeAbsError):
    """Shrinking a safe set by epsilon left an empty box."""


class FactorizationFailureError(SafeAbsError):
    """Cholesky factorization failed even at the maximum jitter level."""


class BoundViolationError(SafeAbsError):
    """The confidence-scaling radicand went negative (data inconsistent
    with the assumed RKHS norm bound / noise level)."""


class EmptyIntersectionError(SafeAbsError):
    """Refining a residual interval produced a lower bound above the
    upper bound; the model assumptions are violated by the data."""


class PrerequisiteViolatedError(SafeAbsError):
    """An incremental computation was handed state that breaks its
    monotonicity prerequisite."""


class NotInWinningSetError(SafeAbsError):
    """A controller query was made at a state with no admissible input."""


class InitialSetInfeasibleError(SafeAbsError):
    """The initial state has no admissible input under the batch-0
    controller, so exploration cannot start."""


class SafetyViolationError(SafeAbsError):
    """A simulated trajectory left the safe set."""


class FormatError(SafeAbsError):
    """A serialized artifact has a bad magic number, version, or layout."""

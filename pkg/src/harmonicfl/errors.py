"""Exception types shared across the package."""


class HarmonicflError(Exception):
    """Base class for all package errors."""


class SpaceMismatchError(HarmonicflError):
    """Point kind does not belong to the metric space it was used with."""


class InvalidSpaceError(HarmonicflError):
    """Metric space construction failed validation."""


class PathRangeError(HarmonicflError):
    """Requested arc length lies outside [0, d(a, b)]."""


class NotStrictlyConvexError(HarmonicflError):
    """A checker that requires strict convexity was applied to a space without it."""


class UnsupportedDecompositionError(HarmonicflError):
    """Social-cost decomposition is undefined (division by zero weight mass)."""


class DegenerateInstanceError(HarmonicflError):
    """Instance has opt = 0 but a nonzero prediction cost."""


class SizeGuardError(HarmonicflError):
    """Input exceeds the hard size limit of an exhaustive routine."""


class NoEquilibriumFoundError(HarmonicflError):
    """Exhaustive search certified no equilibrium; on a continuous space this
    contradicts the existence guarantee and should be treated as an event."""

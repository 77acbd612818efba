"""Exception types shared across the package."""


class DynbcError(Exception):
    """Base class for all package errors."""


class ConfigError(DynbcError):
    """Invalid or malformed run configuration."""


class GeometryError(DynbcError):
    """Domain description cannot be discretized as requested."""


class SolverError(DynbcError):
    """A linear solve broke down or an iteration failed to converge."""


class NormDivergenceError(DynbcError):
    """A weighted norm exceeds the overflow threshold on this grid."""

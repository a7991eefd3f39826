"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration, dataset schema, or file format."""


class NumericalError(RuntimeError):
    """A numerical operation failed beyond the configured safeguards."""


class DegenerateCandidateError(NumericalError):
    """Candidate point is numerically dependent on the current factors."""


class StaleCacheError(RuntimeError):
    """Cached projections do not match the current model generation."""

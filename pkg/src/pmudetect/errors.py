"""Shared exception types."""


class DataError(ValueError):
    """Malformed input data (bad record, bad file, bad line)."""


class ConfigError(ValueError):
    """Invalid or infeasible configuration."""


class TrainingError(RuntimeError):
    """Optimization produced a non-finite loss or otherwise failed."""


class SamplingError(RuntimeError):
    """Triplet sampling preconditions not met (candidate set too small)."""

"""Exception hierarchy shared across the package."""


class ClueGainError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(ClueGainError, ValueError):
    """Invalid network layout, plan or run configuration."""


class InputError(ClueGainError, ValueError):
    """Array or table arguments with the wrong shape or non-finite entries."""


class InternalError(ClueGainError, RuntimeError):
    """Stale caches, mismatched gradient sets and similar misuse."""


class LoadError(ClueGainError, ValueError):
    """A CSV cell could not be parsed."""


class SchemaError(ClueGainError, ValueError):
    """Data does not satisfy the declared column schema."""


class NormalizationError(ClueGainError, ValueError):
    pass


class PreconditionError(ClueGainError, ValueError):
    pass


class MetricError(ClueGainError, ValueError):
    """A metric is undefined for the given inputs."""


class TrainingError(ClueGainError, RuntimeError):
    """Training diverged (non-finite loss)."""

class ConfigError(ValueError):
    """Invalid model, asset or run configuration."""


class DomainError(ValueError):
    """A point lies outside the state domain of a model or grid."""


class NumericalError(RuntimeError):
    """A numerical procedure failed or would be unreliable."""


class OutputError(RuntimeError):
    """Results could not be written."""

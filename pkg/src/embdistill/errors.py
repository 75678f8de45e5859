"""Exception types shared across the pipeline, mapped to CLI exit codes."""


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


class DataError(ValueError):
    """Malformed or inconsistent input data."""

"""Exception types shared across modules."""


class ConfigError(ValueError):
    """A configuration value or document violates its contract."""

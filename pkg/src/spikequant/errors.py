"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Shapes of the operands do not line up for the requested operation."""


class ValidationError(ValueError):
    """An argument violates a documented precondition."""


class ConfigurationError(ValueError):
    """A model or run configuration is internally inconsistent."""


class FormatError(ValueError):
    """An on-disk artifact is malformed (bad magic, version, or truncation)."""

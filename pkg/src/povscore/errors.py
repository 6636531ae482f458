"""Exception hierarchy.

Everything raised deliberately by this package derives from PovscoreError so
callers can catch one base class. The CLI maps SchemaError/ValidationError to
exit code 2 and NumericalError to exit code 3.
"""


class PovscoreError(Exception):
    """Base class for all errors raised by povscore."""


class SchemaError(PovscoreError):
    """A schema file or column-role mapping is malformed or inconsistent."""


class ValidationError(PovscoreError):
    """Input data or arguments violate a documented precondition."""


class ConfigError(ValidationError):
    """A run configuration file is missing keys or holds invalid values."""


class MissingArtifactError(ValidationError):
    """A pipeline stage was asked to run before its prerequisites exist."""


class NumericalError(PovscoreError):
    """A computation failed to converge or produced a degenerate result."""

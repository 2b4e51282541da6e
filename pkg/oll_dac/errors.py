class OllDacError(Exception):
    """Base class for errors raised by the library."""


class ConfigurationError(OllDacError, ValueError):
    pass


class UsageError(OllDacError, RuntimeError):
    pass


class DegenerateStatisticsError(OllDacError, ValueError):
    pass


class TrainingDivergedError(OllDacError, RuntimeError):
    """Non-finite parameters or loss; `diagnostic` holds the step and offending values."""

    def __init__(self, message: str, diagnostic: dict | None = None):
        super().__init__(message)
        self.diagnostic = diagnostic or {}

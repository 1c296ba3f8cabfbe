"""
Exceptions raised by the engine. Each carries the process exit status the command line
reports for it.
"""


class SpreadLearnError(Exception):
    """
    Base class for every error raised deliberately by spreadlearn.
    """
    exit_status = 1


class ConfigError(SpreadLearnError):
    """A configuration value is missing, unknown or out of range."""
    exit_status = 1


class DataError(SpreadLearnError):
    """Input data was rejected: bad file, out-of-range state, dimension mismatch."""
    exit_status = 2


class DegenerateEvidenceError(DataError):
    """The observations have zero probability under the channel and prior."""


class DegenerateChannelError(SpreadLearnError):
    """The channel cannot be inverted, so nothing about the clean data is recoverable."""
    exit_status = 3


class NumericalError(SpreadLearnError):
    """An optimisation diverged or produced non-finite values."""
    exit_status = 3

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics

    def __str__(self):
        if not self.diagnostics:
            return super().__str__()
        details = ', '.join(f'{key}={value}' for key, value in sorted(self.diagnostics.items()))
        return f'{super().__str__()} ({details})'

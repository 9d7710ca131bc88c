"""Exception hierarchy.

``DataError`` and its subclasses map to CLI exit code 2 (usage or data
problems the caller can fix); anything else escaping to the CLI is an
internal error and maps to exit code 1.
"""


class CorefxError(Exception):
    """Base class for all toolkit errors."""


class DataError(CorefxError):
    """Bad input data or unusable configuration supplied by the caller."""


class FormatError(DataError):
    """Malformed serialized data (CoNLL, score dumps, embedding files)."""


class ConfigError(DataError):
    """Inconsistent or infeasible configuration values."""


class CheckpointError(DataError):
    """Unreadable, corrupt, or incompatible checkpoint file."""


class GradientError(CorefxError):
    """A non-finite gradient was produced; names the parameter block."""

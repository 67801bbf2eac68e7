"""
Exception hierarchy raised by the services.

Services raise these (all are `ValueError` subclasses); the CLI layer maps them to exit codes in
`app.utils.error_handlers`.
"""


class SyncwatchError(ValueError):
    """Base class for every domain error."""
    exit_code = 2


"""
Usage errors (exit 1)
"""

class UsageError(SyncwatchError):
    """
    Invalid combination of options: loss/feature pairing, kind mismatch, wrong model head.
    """
    exit_code = 1


"""
Data errors (exit 2)
"""

class DataError(SyncwatchError):
    """
    Input data violates a contract: non-finite values, malformed files, shape mismatches,
    empty datasets.
    """
    exit_code = 2


class FitError(DataError):
    """
    A fitting routine (PCA, k-means) cannot produce the requested model from the data.
    """

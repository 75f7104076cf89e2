"""Error taxonomy shared across the package.

The CLI maps these onto stable exit codes (see cli.py): configuration and
usage problems exit 1, data/IO problems exit 2, numerical aborts exit 3.
"""


class ConfigError(ValueError):
    """Invalid configuration value or unknown config key."""


class StructureError(ValueError):
    """Shape/index mismatch between components (bad qubit index, bad tensor shape, ...)."""


class DataError(RuntimeError):
    """Problem with dataset content or layout."""


class UsageError(RuntimeError):
    """API called out of contract (backward before forward, missing grads, ...)."""


class NumericalAbort(RuntimeError):
    """Training aborted on a non-finite value."""

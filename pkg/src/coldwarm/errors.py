"""Exception hierarchy. CLI exit codes map onto these classes."""


class ColdwarmError(Exception):
    """Base class for all package errors."""


class ConfigError(ColdwarmError):
    """Bad configuration file, unknown keys, out-of-range parameters."""


class DataError(ColdwarmError):
    """Problems with input data (ingestion, schema, degenerate splits)."""


class SchemaError(DataError):
    """Column mapping does not match the input file."""


class RowError(DataError):
    """A malformed data row in abort mode."""

    def __init__(self, lineno, message):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class EmptyLogError(DataError):
    """An operation that needs a non-empty interaction log got an empty one."""


class EmptyFilterError(DataError):
    """p-core filtering converged to the empty log."""


class EmptyTestError(DataError):
    """The global timepoint equals the maximum timestamp: no test users."""


class TuningError(ColdwarmError):
    """Every hyperparameter trial failed."""

    def __init__(self, message, trials=None):
        super().__init__(message)
        self.trials = trials or []


class TrainingError(ColdwarmError):
    """A model training run failed numerically."""


class ScanAbortError(ColdwarmError):
    """Too many scan tasks failed; the run was aborted."""

"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration value is missing, malformed, or out of range."""


class DataError(ValueError):
    """A dataset file or in-memory dataset violates the expected layout."""


class MissingMetaError(DataError):
    """A domain appears in the data but has no meta-data row."""


class OverlappingSplitError(DataError):
    """A domain is assigned to more than one of train/valid/test."""


class MalformedRowError(DataError):
    """A row in a data file cannot be parsed."""


class NumericalError(RuntimeError):
    """Training or optimization produced a non-finite quantity."""

"""Exception types raised across the package."""


class FarmDispatchError(Exception):
    """Base class for all package errors."""


class IngestError(FarmDispatchError):
    """A CSV file is structurally broken (missing, duplicate or misordered hours)."""

    def __init__(self, index, message=None):
        self.index = index
        super().__init__(message or f"bad or missing hour at index {index}")


class ValidationError(FarmDispatchError):
    """A value violates a domain constraint (e.g. negative power)."""


class ConfigError(FarmDispatchError):
    """Inconsistent or incomplete configuration."""


class HorizonError(FarmDispatchError):
    """A forecast horizon runs past the end of the series."""


class ShapeError(FarmDispatchError):
    """Input width does not match the network specification."""


class NumericsError(FarmDispatchError):
    """A non-finite value reached a parameter, gradient or logit."""


class DegenerateError(FarmDispatchError):
    """A statistic is undefined for the given input (e.g. zero peak, all-zero differences)."""


class CheckpointError(FarmDispatchError):
    """Checkpoint file is corrupt or does not match the run configuration."""

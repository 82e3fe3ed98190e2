"""Exception types shared across the package."""


class FedmetaError(Exception):
    """Base class for package errors."""


class LayoutError(FedmetaError):
    """Parameter layouts or tensor dimensions do not match."""


class NumericsError(FedmetaError):
    """A non-finite value appeared where training cannot continue."""


class EpisodeInfeasibleError(FedmetaError):
    """An episode cannot be sampled from the given pool."""


class DataFormatError(FedmetaError):
    """A data file (CSV, checkpoint, round log) failed to parse or validate."""


class ConfigError(FedmetaError):
    """An experiment config is invalid; the message names the field."""

"""Exception hierarchy shared across the package."""


class AutoensError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(AutoensError):
    """A config value or combination of values is invalid."""


class ShapeError(AutoensError):
    """Array dimensions do not line up."""


class InputError(AutoensError):
    """A runtime argument violates an operation's precondition."""


class NumericError(AutoensError):
    """A NaN or Inf showed up where finite values are required."""


class StateError(AutoensError):
    """An event or query arrived in a phase that cannot accept it."""


class NoSignalError(AutoensError):
    """A curve is too flat or degenerate to extract bounds from."""


class CheckpointFormatError(AutoensError):
    """Checkpoint file has a bad magic, version, or layout."""


class CheckpointCorruptionError(AutoensError):
    """Checkpoint file ends before its declared contents do."""


class CsvParseError(AutoensError):
    """A CSV cell or header could not be interpreted."""


class StratificationError(AutoensError):
    """A class has too few samples to appear in every split."""


class CollectionFailureError(AutoensError):
    """A training run ended without collecting a single checkpoint.

    Carries the metrics log accumulated up to the failure so the run can
    still be inspected.
    """

    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = log if log is not None else []

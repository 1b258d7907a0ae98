"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class StateError(RuntimeError):
    """An operation was called on state that is missing or out of phase."""


class ScheduleError(ValueError):
    """A precision schedule produced or was given an invalid value."""


class FormatError(ValueError):
    """A data or checkpoint file does not match its declared format."""


class ConfigError(ValueError):
    """An experiment configuration is invalid."""


class DivergenceError(FloatingPointError):
    """Relaxation or training produced non-finite values.

    ``layer`` is the 1-based index of the first offending layer and
    ``batch`` the batch index when known.
    """

    def __init__(self, message, layer=None, batch=None):
        super().__init__(message)
        self.layer = layer
        self.batch = batch

"""Exception hierarchy shared by all modules."""


class MfgError(Exception):
    """Base class for every error raised by this package."""


class EmptyPopulationError(MfgError, ValueError):
    pass


class DegenerateLeaveOneOutError(MfgError, ValueError):
    pass


class InvalidOrderError(MfgError, ValueError):
    pass


class DimensionMismatchError(MfgError, ValueError):
    pass


class UnsupportedTransportError(MfgError, ValueError):
    pass


class ConfigError(MfgError, ValueError):
    """Invalid model or simulation configuration.

    ``key`` carries the offending key path when one is known.
    """

    def __init__(self, message, key=None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key


class PopulationError(MfgError, ValueError):
    pass


class HorizonTooLongError(MfgError, ArithmeticError):
    """Backward coefficient integration exceeded the blow-up threshold."""

    def __init__(self, time, value):
        super().__init__(
            f"coefficient blow-up (|c| = {value:.3e}) at t = {time:.6g}; "
            "horizon too long for a classical solution"
        )
        self.time = time
        self.value = value


class TimeRangeError(MfgError, ValueError):
    pass


class IndexRangeError(MfgError, IndexError):
    pass


class SimulationDivergedError(MfgError, ArithmeticError):
    pass


class NonFiniteCostError(MfgError, ArithmeticError):
    pass


class RateFitError(MfgError, ValueError):
    pass

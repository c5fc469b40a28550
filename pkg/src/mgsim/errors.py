"""Exception hierarchy shared by all simulator modules."""


class MgsimError(Exception):
    """Base class for every error raised by the simulator."""


# packet crafting
class UnknownField(MgsimError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class LengthTooSmall(MgsimError, ValueError):
    pass


class LengthTooLarge(MgsimError, ValueError):
    pass


class CapacityExceeded(MgsimError, ValueError):
    pass


class OddLength(MgsimError, ValueError):
    pass


class MissingLayer(MgsimError, ValueError):
    pass


class BufferConsumed(MgsimError, RuntimeError):
    """A buffer was touched after being handed to a transmit queue."""


# wire / clocks
class WireOverlap(MgsimError, RuntimeError):
    pass


# rate control
class Exhausted(MgsimError, LookupError):
    pass


class RateAboveLineRate(MgsimError, ValueError):
    pass


class DeltaTooSmall(MgsimError, ValueError):
    pass


class ShortFrameRateExceeded(MgsimError, ValueError):
    pass


# measurement
class NoTarget(MgsimError, ValueError):
    pass


class UnknownOperation(MgsimError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class MeasurementTimeout(MgsimError, RuntimeError):
    pass


class EmptySample(MgsimError, ValueError):
    pass


# runtime
class ConfigInvalid(MgsimError, ValueError):
    def __init__(self, path, message):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}" if path else message)


class QueueConflict(ConfigInvalid):
    pass


class IoFailure(MgsimError, OSError):
    pass

"""Exception types shared across the package."""


class NavError(Exception):
    pass


class UnknownViewpoint(NavError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class NonAdjacentStep(NavError, ValueError):
    pass


class DegeneratePosition(NavError, ValueError):
    pass


class InvalidConfig(NavError, ValueError):
    pass


class NoFeasiblePair(NavError, ValueError):
    pass


class InvalidEpisode(NavError, ValueError):
    pass


class NotSuccessful(NavError, ValueError):
    pass


class DimensionMismatch(NavError, ValueError):
    pass


class FormatVersionMismatch(NavError, ValueError):
    pass


class EmptyDataset(NavError, ValueError):
    pass


class Misalignment(NavError, ValueError):
    pass


class ProtocolError(NavError):
    pass


class InvalidAction(NavError):
    pass


class PolicyTimeout(NavError, TimeoutError):
    pass

"""Shared exception types."""


class MazenavError(Exception):
    pass


class ParseError(MazenavError):
    pass


class DisconnectedMap(MazenavError):
    pass


class MissingStart(MazenavError):
    pass


class ShapeMismatch(MazenavError):
    pass


class NoForwardPass(MazenavError):
    pass


class MissingGradient(MazenavError):
    pass


class InsufficientWalkLength(MazenavError):
    pass


class EmptyBuffer(MazenavError):
    pass


class InvalidIndex(MazenavError):
    pass


class NonFiniteLogits(MazenavError):
    pass


class NonFiniteLoss(MazenavError):
    pass


class ModeMismatch(MazenavError):
    pass


class EmptyGoalSet(MazenavError):
    pass


class MissingCheckpoint(MazenavError):
    pass


class MalformedLog(MazenavError):
    pass


class BadCheckpoint(MazenavError):
    pass


class ConfigError(MazenavError):
    """Usage-level problem: bad config file, unknown key, or bad override."""


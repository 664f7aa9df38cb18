"""Exception types shared across the package."""


class LabError(Exception):
    """Base class for all rejected preconditions and invalid inputs."""


class ShapeError(LabError):
    """Tensor shapes do not satisfy an operation's contract."""


class NumericsError(LabError):
    """Non-finite values or other numeric preconditions violated."""


class DegenerateUtterance(LabError):
    """A word holds more output pieces than frames; the utterance cannot be
    given a frame-level alignment and must be dropped by the caller."""


class ConfigError(LabError):
    """Invalid configuration or corpus parameters."""

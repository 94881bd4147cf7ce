"""laneattn.errors

Exception types shared by every module. Shape, domain and format errors also
derive from ValueError so plain `except ValueError` callers keep working.
"""


class LaneAttnError(Exception):
    """Base class for all predictor errors."""


class ShapeError(LaneAttnError, ValueError):
    """Operand dimensions do not agree."""


class DomainError(LaneAttnError, ValueError):
    """Input outside the operation's domain (empty set, non-scalar root, ...)."""


class DatasetFormatError(LaneAttnError, ValueError):
    """A dataset line could not be parsed."""

    def __init__(self, line: int, field: str, reason: str):
        self.line = line
        self.field = field
        self.reason = reason
        super().__init__(f"line {line}: field '{field}': {reason}")


class CheckpointError(LaneAttnError):
    """Checkpoint container is unreadable or incompatible."""


class HorizonMismatchError(LaneAttnError):
    """Models or samples disagree on the prediction horizon."""


class ConfigError(LaneAttnError, ValueError):
    """Configuration file is malformed or holds out-of-range values."""

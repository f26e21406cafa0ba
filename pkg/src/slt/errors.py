"""Exception hierarchy shared across the package."""


class SLTError(Exception):
    """Base class for every error raised by slt."""


class DimensionError(SLTError, ValueError):
    """Operand shapes do not agree."""


class GradientError(SLTError):
    """A backward rule produced a gradient of the wrong shape."""


class ContractError(SLTError):
    """A precondition of an operation was violated."""


class NumericError(SLTError, FloatingPointError):
    """An operation produced NaN or Inf."""


class DegenerateMaskError(SLTError, ValueError):
    """A mask or ticket would end up empty."""


class TicketIndexError(SLTError, IndexError):
    """Patch ticket index outside the token range."""


class FormatError(SLTError, ValueError):
    """Malformed file on disk (IDX, tensor container, checkpoint)."""

    def __init__(self, message, offset=None, section=None):
        self.offset = offset
        self.section = section
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class ConfigError(SLTError, ValueError):
    """Invalid experiment configuration; ``path`` names the offending key."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")

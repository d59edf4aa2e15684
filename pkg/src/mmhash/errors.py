"""Exception hierarchy shared by all mmhash modules."""


class MmhashError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(MmhashError):
    """Operands have incompatible shapes."""


class InvalidValue(MmhashError):
    """A value violates a documented precondition (non-finite entry,
    out-of-range index, negative margin, ...)."""


class ConvergenceError(MmhashError):
    """An iterative procedure exhausted its iteration budget."""


class SamplingError(MmhashError):
    """A requested pair sample cannot be drawn from the given labels."""


class TrainingError(MmhashError):
    """Optimization cannot start or produced a non-finite loss."""

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message if epoch is None else f"epoch {epoch}: {message}")
        self.epoch = epoch


class FormatError(MmhashError):
    """A file does not conform to its declared on-disk format."""

    def __init__(self, message: str, path=None, line: int | None = None):
        loc = ""
        if path is not None:
            loc = f"{path}:"
            if line is not None:
                loc += f"{line}:"
            loc += " "
        super().__init__(loc + message)
        self.path = path
        self.line = line

"""Exception hierarchy shared across the package."""


class CtxvecError(Exception):
    """Base class for all package errors."""


class UsageError(CtxvecError):
    """Bad command-line usage or an unparseable model string."""


class EmptyCorpus(CtxvecError):
    """No token survived vocabulary construction."""


class ParseError(CtxvecError):
    """A data file is malformed; carries the offending line when known."""

    def __init__(self, message: str, path=None, line: int | None = None):
        loc = ""
        if path is not None:
            loc += f"{path}: "
        if line is not None:
            loc += f"line {line}: "
        super().__init__(loc + message)
        self.path = path
        self.line = line


class EmptyDataset(CtxvecError):
    """A dataset file yielded zero usable records."""


class FormatError(CtxvecError):
    """A binary file failed magic/size/dimension validation."""


class InitError(CtxvecError):
    """Parameter initialization could not be satisfied."""


class ConfigError(CtxvecError):
    """Training configuration is incompatible with the provided data."""


class SpatialDataMissing(CtxvecError):
    """A spatial context model was asked to run without bounding boxes."""


class DegenerateInput(CtxvecError):
    """An input vector is degenerate (e.g. zero norm) for the requested op."""


class NoOverlap(CtxvecError):
    """An evaluation has too few covered items to produce a score."""


class EvalError(CtxvecError):
    """An evaluation task has no usable data."""

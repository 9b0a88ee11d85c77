"""Exception hierarchy shared across the package."""


class CMGError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(CMGError, ValueError):
    """Array dimensions do not line up."""


class DomainError(CMGError, ValueError):
    """Input lies outside the domain of an operation."""


class NumericalError(CMGError, ArithmeticError):
    """A linear solve or factorization failed."""


class ConfigError(CMGError, ValueError):
    """Invalid or unparsable configuration."""


class DataError(CMGError):
    """Base class for file-format problems."""


class ParseError(DataError):
    """Malformed file contents.

    ``offset`` is the byte offset (binary files) or ``line`` the 1-based line
    number (text files) where parsing stopped.
    """

    def __init__(self, message, *, offset=None, line=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"offset {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.offset = offset
        self.line = line


class VersionError(DataError):
    """File was written with an unsupported format version."""


class DegenerateGroupError(DomainError):
    """A cluster is too small to define reconstruction weights."""


class TrainingDiverged(CMGError, RuntimeError):
    """Loss or parameters became non-finite during training."""

    def __init__(self, message, *, epoch=None, stage=None):
        prefix = []
        if stage is not None:
            prefix.append(f"stage {stage}")
        if epoch is not None:
            prefix.append(f"epoch {epoch}")
        if prefix:
            message = f"{' / '.join(prefix)}: {message}"
        super().__init__(message)
        self.epoch = epoch
        self.stage = stage

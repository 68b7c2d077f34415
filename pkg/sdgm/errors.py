# sdgm/errors.py
from typing import Iterable, Optional


class SdgmError(Exception):
    """Base class for every error raised by the sdgm package."""


class InvalidDimensionError(SdgmError, ValueError):
    pass


class InvalidInputError(SdgmError, ValueError):
    pass


class ShapeError(SdgmError, ValueError):
    pass


class InvalidModelError(SdgmError, ValueError):
    pass


class ComponentIndexError(SdgmError, IndexError):
    pass


class FactorizationError(SdgmError, ArithmeticError):
    pass


class UnsupportedConversionError(SdgmError, ValueError):
    pass


class PreconditionError(SdgmError, ValueError):
    pass


class TrainingFailure(SdgmError, RuntimeError):
    pass


class ConfigError(SdgmError, ValueError):
    pass


class DatasetError(SdgmError, ValueError):
    pass


class SpecError(SdgmError, ValueError):
    pass


class SchemaMismatchError(SdgmError, ValueError):
    pass


class UsageError(SdgmError):
    """Bad command line; reported with exit code 1."""


class ParseError(SdgmError, ValueError):
    """Malformed input file; `line` is 1-based."""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        where = ''
        if path is not None:
            where = f'{path}:{line}: ' if line is not None else f'{path}: '
        elif line is not None:
            where = f'line {line}: '
        super().__init__(f'{where}{message}')


class SplitNotFoundError(SdgmError, FileNotFoundError):
    def __init__(self, directory: str, index: int, available: Iterable[int]):
        self.directory = directory
        self.index = index
        self.available = sorted(available)
        listing = ', '.join(str(i) for i in self.available) or 'none'
        super().__init__(f'split {index} not found in {directory} (available: {listing})')


def explain_error(exc: BaseException) -> str:
    # one-line message for the CLI; domain errors already carry context
    if isinstance(exc, SdgmError):
        return str(exc)
    if isinstance(exc, OSError) and exc.filename:
        return f'{exc.strerror or exc.__class__.__name__}: {exc.filename}'
    return f'{exc.__class__.__name__}: {exc}'

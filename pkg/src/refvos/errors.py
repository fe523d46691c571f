"""Exception hierarchy shared across the toolkit."""

from __future__ import annotations


class RefVOSError(Exception):
    """Base class for every error raised by refvos."""


class ShapeError(RefVOSError, ValueError):
    """Two masks (or a mask and a grid) disagree on dimensions."""


class ConfigError(RefVOSError, ValueError):
    pass


class InputError(RefVOSError, ValueError):
    pass


class MetaParseError(RefVOSError, ValueError):
    pass


class SchemaError(MetaParseError):
    pass


class DecodeError(RefVOSError):
    pass


class WriteError(RefVOSError, OSError):
    pass


class ConsistencyError(RefVOSError, ValueError):
    pass


class BackendError(RefVOSError):
    """An external backend process failed, timed out or could not start."""

    def __init__(self, message: str, diagnostics: str = ""):
        super().__init__(message if not diagnostics else f"{message}\n{diagnostics}")
        self.diagnostics = diagnostics


class ProtocolError(RefVOSError):
    """A backend response violated the file-exchange contract."""


class EvaluationError(RefVOSError):
    def __init__(self, message: str, missing: list | None = None):
        super().__init__(message)
        self.missing = list(missing or [])


class RenderError(RefVOSError):
    pass

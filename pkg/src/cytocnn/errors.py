"""Exception types shared across the package."""


class CytoError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(CytoError, ValueError):
    """Array shapes are inconsistent with an operation's contract."""


class ValidationError(CytoError, ValueError):
    """An argument or configuration value is out of its legal range."""


class FormatError(CytoError, ValueError):
    """A serialized artifact is malformed; the message names the failing field."""


class LoadError(CytoError, RuntimeError):
    """A dataset root is missing, empty, or otherwise unloadable."""

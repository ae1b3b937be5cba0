"""Exception types shared across the package."""


class Csi2qError(Exception):
    """Base class for all package errors."""


class InvalidArgument(Csi2qError, ValueError):
    pass


class DetectionFailure(Csi2qError):
    """No burst could be located in a capture."""


class DegenerateInput(Csi2qError, ValueError):
    """A CSI estimate too close to zero to be divided by."""


class FormatError(Csi2qError):
    """Malformed on-disk data.

    ``offset`` is the byte position where parsing failed, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(Csi2qError):
    pass

"""Exception types shared across the package."""


class SplatError(Exception):
    """Base class for all splatstream errors."""


class InvalidParameter(SplatError, ValueError):
    """A numeric argument violates a documented precondition."""


class StaleFieldError(SplatError):
    """A retained render output no longer matches the field it was made from."""


class UnknownImageError(SplatError, KeyError):
    """An image id is not registered."""


class ConfigError(SplatError, ValueError):
    """A configuration file contains an unknown key or a malformed value."""


class ColmapParseError(SplatError, ValueError):
    """A COLMAP text file is malformed; carries the offending line number."""

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


class UnsupportedCameraModel(SplatError, ValueError):
    """Camera model other than PINHOLE / SIMPLE_PINHOLE."""

    def __init__(self, model):
        super().__init__(f"unsupported camera model: {model}")
        self.model = model

"""Progressive Gaussian-splatting trainer: streams posed images into a growing field."""

__version__ = "0.1.0"

from .camera import CameraFrame, look_at
from .errors import (
    ColmapParseError,
    ConfigError,
    InvalidParameter,
    SplatError,
    StaleFieldError,
    UnknownImageError,
    UnsupportedCameraModel,
)
from .field import (
    DensifyOptions,
    DensifySummary,
    Gaussian,
    GaussianField,
    SparsePoint,
    SpatialIndex,
    covariance_from_params,
    filter_new_points,
)

__all__ = [
    "CameraFrame",
    "ColmapParseError",
    "ConfigError",
    "DensifyOptions",
    "DensifySummary",
    "Gaussian",
    "GaussianField",
    "InvalidParameter",
    "SparsePoint",
    "SpatialIndex",
    "SplatError",
    "StaleFieldError",
    "UnknownImageError",
    "UnsupportedCameraModel",
    "covariance_from_params",
    "filter_new_points",
    "look_at",
    "__version__",
]

"""Pinhole camera frames consumed by the rasterizer and the training loop."""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameter


@dataclass
class CameraFrame:
    """One posed input image.

    The pose is world-to-camera: ``x_cam = R @ x_world + t`` with the camera
    looking down +z, x right, y down (COLMAP convention).  ``pixels`` is an
    H x W x 3 float array in [0, 1] and may be None for pose-only frames
    (e.g. when rendering novel views).  ``feature_count`` is the number of
    detected keypoints and is used to normalize pairwise overlap degrees.
    """

    image_id: int
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray
    pixels: np.ndarray | None = None
    feature_count: int = 0
    name: str = ""
    _center: np.ndarray = field(init=False, repr=False, default=None)

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidParameter(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > 1e-9:
            raise InvalidParameter(f"rotation is not orthonormal (max deviation {err:.3e})")
        if self.pixels is not None:
            self.pixels = np.asarray(self.pixels, dtype=np.float64)
            if self.pixels.shape != (self.height, self.width, 3):
                raise InvalidParameter(
                    f"pixel buffer shape {self.pixels.shape} does not match "
                    f"{self.height}x{self.width}x3"
                )
            if not np.isfinite(self.pixels).all():
                raise InvalidParameter("pixel buffer contains non-finite values")
        self._center = -self.rotation.T @ self.translation

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return self._center

    def attach_pixels(self, pixels) -> None:
        """Install a decoded pixel buffer, validating against intrinsics."""
        pixels = np.asarray(pixels, dtype=np.float64)
        if pixels.shape != (self.height, self.width, 3):
            raise InvalidParameter(
                f"pixel buffer shape {pixels.shape} does not match "
                f"{self.height}x{self.width}x3"
            )
        if not np.isfinite(pixels).all():
            raise InvalidParameter("pixel buffer contains non-finite values")
        self.pixels = pixels

    def replace_pose(self, rotation, translation) -> None:
        """Install a refined pose (e.g. from a later global adjustment)."""
        self.rotation = np.asarray(rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(translation, dtype=np.float64).reshape(3)
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > 1e-9:
            raise InvalidParameter(f"refined rotation is not orthonormal (max deviation {err:.3e})")
        self._center = -self.rotation.T @ self.translation


def look_at(eye, target, up=(0.0, -1.0, 0.0)):
    """World-to-camera rotation/translation for a camera at ``eye`` looking at ``target``.

    The default ``up`` keeps +y pointing down in the image, matching the
    y-down pixel convention.
    """
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    fwd = target - eye
    n = np.linalg.norm(fwd)
    if n == 0:
        raise InvalidParameter("look_at target coincides with eye")
    z = fwd / n
    up = np.asarray(up, dtype=np.float64)
    x = np.cross(z, up)
    nx = np.linalg.norm(x)
    if nx < 1e-12:
        up = np.array([0.0, 0.0, 1.0]) if abs(z[2]) < 0.9 else np.array([0.0, -1.0, 0.0])
        x = np.cross(z, up)
        nx = np.linalg.norm(x)
    x = x / nx
    y = np.cross(z, x)
    rot = np.stack([x, y, z], axis=0)
    return rot, -rot @ eye

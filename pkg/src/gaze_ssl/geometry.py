"""Visual-angle / pixel conversions and gaze-centred crop windows.

The angle model is linear (pixels per degree = width / hfov) with an
isotropic pixel pitch, so the vertical field of view follows from the
horizontal one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CameraIntrinsics:
    width_px: int = 640
    height_px: int = 480
    hfov_deg: float = 72.0
    fps: float = 30.0

    def __post_init__(self):
        if self.width_px < 1 or self.height_px < 1:
            raise ValueError(f"frame must be at least 1x1 px, got {self.width_px}x{self.height_px}")
        if not 0.0 < self.hfov_deg < 180.0:
            raise ValueError(f"hfov_deg must lie in (0, 180), got {self.hfov_deg}")
        if self.fps <= 0:
            raise ValueError(f"fps must be positive, got {self.fps}")

    @property
    def px_per_deg(self) -> float:
        return self.width_px / self.hfov_deg

    @property
    def deg_per_px(self) -> float:
        return self.hfov_deg / self.width_px

    def contains(self, x: float, y: float) -> bool:
        return 0.0 <= x < self.width_px and 0.0 <= y < self.height_px


@dataclass(frozen=True)
class GazePoint:
    x: float
    y: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=np.float64)


@dataclass(frozen=True)
class CropWindow:
    """Square pixel window; ``x0, y0`` is the inclusive top-left corner."""

    x0: int
    y0: int
    size_px: int

    @property
    def x1(self) -> int:
        return self.x0 + self.size_px

    @property
    def y1(self) -> int:
        return self.y0 + self.size_px

    def contains(self, x: float, y: float) -> bool:
        return self.x0 <= x < self.x1 and self.y0 <= y < self.y1

    def inside(self, intr: CameraIntrinsics) -> bool:
        return self.x0 >= 0 and self.y0 >= 0 and self.x1 <= intr.width_px and self.y1 <= intr.height_px

    def slice(self, image: np.ndarray) -> np.ndarray:
        """Cut this window out of an ``H x W [x C]`` image."""
        return image[self.y0:self.y1, self.x0:self.x1]


def deg_to_px(deg: float, intr: CameraIntrinsics) -> float:
    """Length in pixels subtended by ``deg`` degrees of visual angle."""
    if not deg > 0:
        raise ValueError(f"visual angle must be positive, got {deg}")
    return deg * intr.width_px / intr.hfov_deg


def px_to_deg(px: float, intr: CameraIntrinsics) -> float:
    return px * intr.hfov_deg / intr.width_px


def _clamp_start(center: float, size: int, extent: int) -> int:
    # only bites for 1-px windows, which would otherwise start one pixel before a gaze in the left half of its pixel
    start = max(math.floor(center - size / 2), math.floor(center) - size + 1)
    return min(max(start, 0), extent - size)


def compute_crop(gaze: GazePoint, size_px: int, intr: CameraIntrinsics) -> CropWindow:
    """Square window of ``size_px`` centred on ``gaze``.

    A window that would cross a frame border is shifted orthogonally away from
    that border by the minimum number of pixels, so the crop always has the
    requested size and still contains the original gaze point.
    """
    size_px = int(size_px)
    if size_px < 1:
        raise ValueError(f"crop size must be positive, got {size_px}")
    if size_px > min(intr.width_px, intr.height_px):
        raise ValueError(
            f"crop of {size_px} px does not fit a {intr.width_px}x{intr.height_px} frame"
        )
    x0 = _clamp_start(gaze.x, size_px, intr.width_px)
    y0 = _clamp_start(gaze.y, size_px, intr.height_px)
    return CropWindow(x0, y0, size_px)


def angular_distance(a: GazePoint, b: GazePoint, intr: CameraIntrinsics) -> float:
    """Visual angle in degrees between two gaze points (isotropic pitch)."""
    return math.hypot(b.x - a.x, b.y - a.y) * intr.deg_per_px


def angular_distances(points: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Vectorised ``angular_distance`` between consecutive rows of an ``(n, 2)`` array."""
    steps = np.diff(np.asarray(points, dtype=np.float64), axis=0)
    return np.hypot(steps[:, 0], steps[:, 1]) * intr.deg_per_px

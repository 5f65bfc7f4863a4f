"""Pinhole camera model: intrinsics, projection and unprojection.

Camera frame convention: x right, y down, z forward (optical axis).
Pixel (u, v) corresponds to the ray ((u - cx)/fx, (v - cy)/fy, 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class BehindCameraError(ValueError):
    """Point has z <= 0 and cannot be projected."""


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got ({self.fx}, {self.fy})")
        if not (0 <= self.cx < self.width):
            raise ValueError(f"cx={self.cx} outside [0, {self.width})")
        if not (0 <= self.cy < self.height):
            raise ValueError(f"cy={self.cy} outside [0, {self.height})")


def project_point(p, camera: CameraIntrinsics) -> tuple[float, float, float, bool]:
    """Project a camera-frame point to pixel coordinates.

    Returns (u, v, depth, in_frustum) where depth is the z coordinate and
    in_frustum reports whether (u, v) lands inside the image bounds.
    Raises BehindCameraError for z <= 0.
    """
    x, y, z = (float(v) for v in p)
    if z <= 0.0:
        raise BehindCameraError(f"point has non-positive depth z={z}")
    u = camera.fx * x / z + camera.cx
    v = camera.fy * y / z + camera.cy
    inside = (0.0 <= u < camera.width) and (0.0 <= v < camera.height)
    return u, v, z, inside


def unproject_pixel(u: float, v: float, depth: float, camera: CameraIntrinsics) -> np.ndarray:
    """Invert project_point: pixel plus z-depth back to a camera-frame point."""
    if depth <= 0.0:
        raise ValueError(f"depth must be positive, got {depth}")
    x = (u - camera.cx) * depth / camera.fx
    y = (v - camera.cy) * depth / camera.fy
    return np.array([x, y, depth], dtype=np.float64)


def pixel_rays(camera: CameraIntrinsics) -> np.ndarray:
    """Per-pixel ray directions with dz = 1, shape (H, W, 3).

    A point at parameter t along ray (dx, dy, 1) has depth exactly t, so
    intersection parameters double as z-buffer values.
    """
    us = np.arange(camera.width, dtype=np.float64)
    vs = np.arange(camera.height, dtype=np.float64)
    dx = (us[None, :] - camera.cx) / camera.fx
    dy = (vs[:, None] - camera.cy) / camera.fy
    rays = np.empty((camera.height, camera.width, 3), dtype=np.float64)
    rays[:, :, 0] = dx
    rays[:, :, 1] = dy
    rays[:, :, 2] = 1.0
    return rays

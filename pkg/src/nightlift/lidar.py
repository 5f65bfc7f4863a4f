"""Simulated LiDAR returns as structured subsampling of a dense z-buffer.

A spinning unit is modelled as n_beams elevation rows swept at a fixed
azimuth step, with per-return dropout and Gaussian range noise.  This keeps
the "sparse trustworthy depth" role of a real sensor while staying exactly
verifiable against the dense depth it samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import CameraIntrinsics


@dataclass(frozen=True)
class LidarPattern:
    n_beams: int = 16
    azimuth_resolution: float = 0.01  # radians between returns
    dropout_rate: float = 0.1
    range_noise_sigma: float = 0.02  # meters

    def __post_init__(self) -> None:
        if self.n_beams < 1:
            raise ValueError(f"n_beams must be >= 1, got {self.n_beams}")
        if not 0.0 <= self.dropout_rate <= 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1], got {self.dropout_rate}")
        if self.azimuth_resolution <= 0:
            raise ValueError("azimuth_resolution must be positive")
        if self.range_noise_sigma < 0:
            raise ValueError("range_noise_sigma must be non-negative")


def beam_rows(pattern: LidarPattern, height: int) -> np.ndarray:
    """Elevation rows hit by the beams: evenly spaced over the image height."""
    rows = np.linspace(0, height - 1, pattern.n_beams)
    return np.unique(np.round(rows).astype(np.int64))


def beam_columns(pattern: LidarPattern, camera: CameraIntrinsics) -> np.ndarray:
    """Columns swept at multiples of the azimuth step, mapped through tan."""
    max_angle = np.arctan(max(camera.cx, camera.width - 1 - camera.cx) / camera.fx)
    n_side = int(np.floor(max_angle / pattern.azimuth_resolution))
    angles = np.arange(-n_side, n_side + 1) * pattern.azimuth_resolution
    us = np.round(camera.cx + camera.fx * np.tan(angles)).astype(np.int64)
    us = us[(us >= 0) & (us < camera.width)]
    return np.unique(us)


def simulate_lidar(
    dense_depth: np.ndarray,
    camera: CameraIntrinsics,
    pattern: LidarPattern,
    seed: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Subsample a dense depth map into (sparse_depth, mask).

    Retained pixels lie on the beam rows/columns, survive dropout, and carry
    depth perturbed by Gaussian noise clamped to stay positive.  With
    dropout_rate=1 the mask is empty.
    """
    depth = np.asarray(dense_depth, dtype=np.float32)
    if depth.ndim != 2:
        raise ValueError(f"dense_depth must be H x W, got shape {depth.shape}")
    rng = np.random.default_rng(seed)
    mask = np.zeros(depth.shape, dtype=bool)
    rows = beam_rows(pattern, depth.shape[0])
    cols = beam_columns(pattern, camera)
    grid = np.ix_(rows, cols)
    keep = rng.random((len(rows), len(cols))) >= pattern.dropout_rate
    mask[grid] = keep

    sparse = np.zeros_like(depth)
    values = depth[mask]
    if pattern.range_noise_sigma > 0 and values.size:
        values = values + rng.normal(0.0, pattern.range_noise_sigma, size=values.shape)
        values = np.maximum(values, 1e-6).astype(np.float32)
    sparse[mask] = values
    return sparse, mask

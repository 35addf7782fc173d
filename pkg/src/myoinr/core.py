"""Domain types and coordinate conventions shared across the package.

Pixel coordinates are (x, y) = (column, row). Normalized coordinates map pixel
index 0 to -1 and ``image_size - 1`` to +1; time maps frame ``k`` to
``k / (frame_count - 1)`` so end-diastole sits at t = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

IMAGE_SIZE = 128
DEFAULT_RINGS = 7
DEFAULT_SPOKES = 24


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        raise ValueError("empty input")
    return pts


def normalize_coords(points, image_size: int = IMAGE_SIZE) -> np.ndarray:
    """Pixel coordinates -> [-1, 1]. Works on any array whose last axis is 2."""
    if image_size < 2:
        raise ValueError("image_size must be >= 2")
    pts = _as_points(points)
    return pts * (2.0 / (image_size - 1)) - 1.0


def denormalize_coords(points, image_size: int = IMAGE_SIZE) -> np.ndarray:
    if image_size < 2:
        raise ValueError("image_size must be >= 2")
    pts = _as_points(points)
    return (pts + 1.0) * ((image_size - 1) / 2.0)


def normalize_time(frame_index, frame_count: int):
    if frame_count < 2:
        raise ValueError("need at least 2 frames")
    return np.asarray(frame_index, dtype=np.float64) / (frame_count - 1)


def pixel_scale(image_size: int = IMAGE_SIZE) -> float:
    """Pixels per normalized unit."""
    return (image_size - 1) / 2.0


@dataclass(frozen=True)
class TagFrameSeries:
    """One slice's cine stack. ``frames`` has shape (T, H, W) with values in [0, 1]."""

    frames: np.ndarray
    pixel_spacing_mm: float = 1.0
    frame_interval_s: float = 0.04
    case_id: str = "case"
    slice_index: int = 0

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 3:
            raise ValueError(f"frames must be (T, H, W), got shape {frames.shape}")
        if frames.shape[0] < 2:
            raise ValueError("need at least 2 frames")
        if frames.shape[1] != frames.shape[2]:
            raise ValueError("frames must be square")
        if frames.size and (frames.min() < 0.0 or frames.max() > 1.0):
            raise ValueError("intensities must lie in [0, 1]")
        if self.pixel_spacing_mm <= 0 or self.frame_interval_s <= 0:
            raise ValueError("spacing and frame interval must be positive")
        if self.slice_index not in (0, 1, 2):
            raise ValueError("slice_index must be 0, 1 or 2")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)

    @property
    def frame_count(self) -> int:
        return self.frames.shape[0]

    @property
    def image_size(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class LandmarkGrid:
    """Ring x spoke material points, ``points`` shaped (T, rings * spokes, 2) in pixels.

    Point index p = ring * spokes + spoke; ring 0 is endocardial, spokes run
    counter-clockwise and close cyclically.
    """

    rings: int
    spokes: int
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 2:
            pts = pts[None]
        if pts.ndim != 3 or pts.shape[-1] != 2:
            raise ValueError(f"points must be (T, P, 2), got {pts.shape}")
        if self.rings < 2 or self.spokes < 3:
            raise ValueError("need rings >= 2 and spokes >= 3")
        if pts.shape[1] != self.rings * self.spokes:
            raise ValueError(
                f"point count {pts.shape[1]} inconsistent with "
                f"{self.rings} rings x {self.spokes} spokes"
            )
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def frame_count(self) -> int:
        return self.points.shape[0]

    @property
    def n_points(self) -> int:
        return self.rings * self.spokes

    def frame(self, k: int) -> "LandmarkGrid":
        return LandmarkGrid(self.rings, self.spokes, self.points[k : k + 1])

    def as_rings(self) -> np.ndarray:
        """View as (T, rings, spokes, 2)."""
        return self.points.reshape(self.frame_count, self.rings, self.spokes, 2)

    def same_topology(self, other: "LandmarkGrid") -> bool:
        return self.rings == other.rings and self.spokes == other.spokes


def make_landmark_grid(center, r_endo: float, r_epi: float,
                       rings: int = DEFAULT_RINGS, spokes: int = DEFAULT_SPOKES) -> LandmarkGrid:
    """Single-frame ring x spoke grid, radii uniformly spaced from endo to epi."""
    if not 0 < r_endo < r_epi:
        raise ValueError("require 0 < r_endo < r_epi")
    if rings < 2 or spokes < 3:
        raise ValueError("need rings >= 2 and spokes >= 3")
    cx, cy = np.asarray(center, dtype=np.float64)
    rho = np.linspace(r_endo, r_epi, rings)
    theta = 2.0 * np.pi * np.arange(spokes) / spokes
    x = cx + rho[:, None] * np.cos(theta)[None, :]
    y = cy + rho[:, None] * np.sin(theta)[None, :]
    pts = np.stack([x, y], axis=-1).reshape(1, rings * spokes, 2)
    return LandmarkGrid(rings, spokes, pts)


@dataclass(frozen=True)
class CaseRecord:
    series: TagFrameSeries
    landmarks: LandmarkGrid | None = None
    ground_truth_deformation: Any = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.landmarks is None:
            return
        if self.landmarks.frame_count != self.series.frame_count:
            raise ValueError("landmark frames do not match image frames")
        size = self.series.image_size
        pts = self.landmarks.points
        if pts.min() < 0 or pts.max() > size - 1:
            raise ValueError("landmarks fall outside the image")

    @property
    def case_id(self) -> str:
        return self.series.case_id

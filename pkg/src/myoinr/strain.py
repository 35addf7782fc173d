"""Lagrangian chord strains, point error and agreement statistics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import LandmarkGrid


def local_strain(l_ed, l_es):
    l_ed = np.asarray(l_ed, dtype=np.float64)
    if np.any(l_ed <= 0):
        raise ValueError("reference length must be positive")
    return (np.asarray(l_es, dtype=np.float64) - l_ed) / l_ed


def _frame_points(grid: LandmarkGrid, frame: int | None) -> np.ndarray:
    g = grid.as_rings()
    if frame is None:
        if grid.frame_count != 1:
            raise ValueError("multi-frame grid given without a frame index")
        frame = 0
    return g[frame]


def _check(grid_ed: LandmarkGrid, grid_es: LandmarkGrid):
    if not grid_ed.same_topology(grid_es):
        raise ValueError(
            f"topology mismatch: {grid_ed.rings}x{grid_ed.spokes} vs {grid_es.rings}x{grid_es.spokes}"
        )


def circ_lengths(p: np.ndarray) -> np.ndarray:
    """Chord lengths between cyclic spoke neighbours, (rings, spokes) -> flat ring-major."""
    return np.linalg.norm(np.roll(p, -1, axis=1) - p, axis=-1).reshape(-1)


def rad_lengths(p: np.ndarray) -> np.ndarray:
    return np.linalg.norm(p[1:] - p[:-1], axis=-1).reshape(-1)


def gcs(grid_ed: LandmarkGrid, grid_es: LandmarkGrid, ed_frame=None, es_frame=None):
    """Mean chord strain around every ring. Returns (gcs, per-pair strains)."""
    _check(grid_ed, grid_es)
    eps = local_strain(circ_lengths(_frame_points(grid_ed, ed_frame)),
                       circ_lengths(_frame_points(grid_es, es_frame)))
    return float(eps.mean()), eps


def grs(grid_ed: LandmarkGrid, grid_es: LandmarkGrid, ed_frame=None, es_frame=None):
    """Mean strain of radial segments between adjacent rings on every spoke."""
    _check(grid_ed, grid_es)
    eps = local_strain(rad_lengths(_frame_points(grid_ed, ed_frame)),
                       rad_lengths(_frame_points(grid_es, es_frame)))
    return float(eps.mean()), eps


def point_rmse(pred: LandmarkGrid, ref: LandmarkGrid, spacing_mm: float = 1.0,
               skip_reference: bool = True) -> float:
    """RMS Euclidean distance in mm over all points and frames (frame 0 excluded by default)."""
    a, b = np.asarray(pred.points), np.asarray(ref.points)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if skip_reference and a.shape[0] > 1:
        a, b = a[1:], b[1:]
    d2 = ((a - b) ** 2).sum(axis=-1)
    return float(np.sqrt(d2.mean()) * spacing_mm)


@dataclass(frozen=True)
class AgreementStats:
    bias: float
    sd: float
    error: float
    n_cases: int


def agreement(pred_strains, ref_strains) -> AgreementStats:
    """Bias / SD / mean absolute difference, in percent, of fractional strains."""
    p = np.asarray(pred_strains, dtype=np.float64)
    r = np.asarray(ref_strains, dtype=np.float64)
    if p.shape != r.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {r.shape}")
    if p.size == 0:
        raise ValueError("need at least one case")
    diff = (p - r) * 100.0
    sd = float(diff.std(ddof=1)) if diff.size > 1 else 0.0
    return AgreementStats(float(diff.mean()), sd, float(np.abs(diff).mean()), int(diff.size))


def end_systole_index(landmarks: LandmarkGrid | None = None, deformation=None,
                      frame_count: int | None = None) -> int:
    """Frame of maximal contraction.

    From landmarks: the frame minimizing the innermost ring's perimeter (ties
    go to the lowest index). From an analytic deformation: the frame nearest
    its peak time.
    """
    if landmarks is not None:
        if landmarks.frame_count < 2:
            raise ValueError("need at least 2 frames")
        inner = landmarks.as_rings()[:, 0]
        perim = np.linalg.norm(np.roll(inner, -1, axis=1) - inner, axis=-1).sum(axis=1)
        # round so numerically equal perimeters tie exactly
        perim = np.round(perim, 9)
        return int(np.argmin(perim))
    if deformation is None or frame_count is None:
        raise ValueError("need landmarks or (deformation, frame_count)")
    if frame_count < 2:
        raise ValueError("need at least 2 frames")
    return int(np.rint(deformation.t_es * (frame_count - 1)))


@dataclass
class StrainReport:
    gcs: float
    grs: float
    per_pair_circ: np.ndarray
    per_pair_rad: np.ndarray
    end_systole_frame: int
    per_slice: dict = field(default_factory=dict)


def strain_report(grid: LandmarkGrid, es_frame: int | None = None) -> StrainReport:
    """ED (frame 0) to ES strains for a multi-frame grid."""
    if es_frame is None:
        es_frame = end_systole_index(grid)
    c, pc = gcs(grid, grid, 0, es_frame)
    r, pr = grs(grid, grid, 0, es_frame)
    return StrainReport(c, r, pc, pr, es_frame)


def aggregate_slices(values_by_case: dict) -> dict:
    """Per-case value = unweighted mean over that case's slices."""
    return {cid: float(np.mean(v)) for cid, v in values_by_case.items()}

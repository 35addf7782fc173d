"""Synthetic short-axis tagging cases with analytic ground-truth motion.

Motion is a polar map about the LV centre. In the default incompressible mode
the squared radius shrinks by k(t) (r' = sqrt(r^2 - k)), which preserves area
exactly; a uniform twist and a translation drift ride on top. The optional
thickening mode keeps the epicardium fixed and stretches the wall radially,
which is deliberately not area preserving.

All deformation parameters live in normalized coordinates; rendering and
landmarks work in pixels and convert at the boundary.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .core import (
    IMAGE_SIZE,
    DEFAULT_RINGS,
    DEFAULT_SPOKES,
    CaseRecord,
    LandmarkGrid,
    TagFrameSeries,
    denormalize_coords,
    make_landmark_grid,
    normalize_coords,
)

INCOMPRESSIBLE = "incompressible"
THICKENING = "thickening"


def temporal_profile(t, t_es: float, s_end: float = 0.0):
    """Smooth bump: 0 at t=0, 1 at t_es, s_end at t=1 (C1 at t_es)."""
    t = np.asarray(t, dtype=np.float64)
    rise = np.sin(0.5 * np.pi * np.clip(t / t_es, 0.0, 1.0)) ** 2
    fall = 1.0 - (1.0 - s_end) * np.sin(0.5 * np.pi * np.clip((t - t_es) / (1.0 - t_es), 0.0, 1.0)) ** 2
    return np.where(t <= t_es, rise, fall)


@dataclass(frozen=True)
class AnalyticDeformation:
    center: tuple = (0.0, 0.0)
    k_max: float = 0.0
    twist: float = 0.0
    t_es: float = 0.35
    s_end: float = 0.0
    drift: tuple = (0.0, 0.0)
    mode: str = INCOMPRESSIBLE
    thickening: float = 0.0
    r_epi: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.t_es < 1.0:
            raise ValueError("t_es must lie in (0, 1)")
        if self.k_max < 0:
            raise ValueError("k_max must be nonnegative")
        if self.mode not in (INCOMPRESSIBLE, THICKENING):
            raise ValueError(f"unknown mode {self.mode!r}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "drift", tuple(float(c) for c in self.drift))

    @property
    def area_preserving(self) -> bool:
        return self.mode == INCOMPRESSIBLE

    def s(self, t):
        return temporal_profile(t, self.t_es, self.s_end)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["center"] = list(self.center)
        d["drift"] = list(self.drift)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AnalyticDeformation":
        return cls(**d)

    # radial maps: r -> r' and back, plus dr'/dr
    def _radial(self, r, s):
        if self.mode == INCOMPRESSIBLE:
            k = self.k_max * s
            if np.any(r * r < k - 1e-15):
                raise ValueError("point inside collapse radius")
            return np.sqrt(np.maximum(r * r - k, 0.0))
        g = 1.0 + self.thickening * s
        return self.r_epi - (self.r_epi - r) * g

    def _radial_inv(self, rp, s):
        if self.mode == INCOMPRESSIBLE:
            return np.sqrt(rp * rp + self.k_max * s)
        g = 1.0 + self.thickening * s
        return self.r_epi - (self.r_epi - rp) / g

    def _radial_slope(self, r, rp, s):
        if self.mode == INCOMPRESSIBLE:
            return r / rp
        return np.broadcast_to(1.0 + self.thickening * s, np.shape(r))


def deform_point(d: AnalyticDeformation, X, t):
    """Map material points X (..., 2), normalized, to their position at time t."""
    X = np.asarray(X, dtype=np.float64)
    s = d.s(t)
    c = np.asarray(d.center)
    rel = X - c
    r = np.hypot(rel[..., 0], rel[..., 1])
    theta = np.arctan2(rel[..., 1], rel[..., 0])
    rp = d._radial(r, s)
    th = theta + d.twist * s
    out = np.stack([rp * np.cos(th), rp * np.sin(th)], axis=-1)
    return out + c + np.asarray(d.drift) * np.asarray(s)[..., None]


def inverse_deform_point(d: AnalyticDeformation, Xp, t):
    Xp = np.asarray(Xp, dtype=np.float64)
    s = d.s(t)
    c = np.asarray(d.center)
    rel = Xp - c - np.asarray(d.drift) * np.asarray(s)[..., None]
    rp = np.hypot(rel[..., 0], rel[..., 1])
    th = np.arctan2(rel[..., 1], rel[..., 0])
    r = d._radial_inv(rp, s)
    theta = th - d.twist * s
    return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1) + c


def deformation_jacobian(d: AnalyticDeformation, X, t):
    """Closed-form spatial Jacobian dX'/dX, shape (..., 2, 2).

    In polar form J = R(theta') diag(dr'/dr, r'/r) R(theta)^T.
    """
    X = np.asarray(X, dtype=np.float64)
    s = d.s(t)
    rel = X - np.asarray(d.center)
    r = np.hypot(rel[..., 0], rel[..., 1])
    theta = np.arctan2(rel[..., 1], rel[..., 0])
    rp = d._radial(r, s)
    slope = d._radial_slope(r, rp, s)
    th = theta + d.twist * s

    def rot(a):
        ca, sa = np.cos(a), np.sin(a)
        return np.stack([np.stack([ca, -sa], -1), np.stack([sa, ca], -1)], -2)

    D = np.zeros(r.shape + (2, 2))
    D[..., 0, 0] = slope
    D[..., 1, 1] = rp / r
    return rot(th) @ D @ np.swapaxes(rot(theta), -1, -2)


@dataclass(frozen=True)
class TagPattern:
    spacing: float = 7.0
    contrast: float = 1.0
    half_life: float = 20.0
    noise_sigma: float = 0.0
    angle: float = 0.0
    myo: float = 0.8
    blood: float = 0.3
    background: float = 0.05

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Geometry:
    """Annulus in normalized units plus image size."""

    r_endo: float
    r_epi: float
    image_size: int = IMAGE_SIZE


def tag_depth(t, frame_count: int, half_life: float):
    return np.exp(-np.asarray(t) * frame_count * math.log(2.0) / half_life)


def tag_intensity(Xpix, pattern: TagPattern, depth):
    """Myocardial intensity for material points given in pixel coordinates."""
    ca, sa = math.cos(pattern.angle), math.sin(pattern.angle)
    x = ca * Xpix[..., 0] + sa * Xpix[..., 1]
    y = -sa * Xpix[..., 0] + ca * Xpix[..., 1]
    B, lam = pattern.contrast, pattern.spacing
    grid = 0.25 * (1 + B * np.cos(2 * np.pi * x / lam)) * (1 + B * np.cos(2 * np.pi * y / lam))
    return pattern.myo * (depth * grid + (1.0 - depth))


def render_frame(d: AnalyticDeformation, pattern: TagPattern, t: float, geometry: Geometry,
                 rng: np.random.Generator | None = None, frame_count: int = 20) -> np.ndarray:
    n = geometry.image_size
    rows, cols = np.mgrid[0:n, 0:n].astype(np.float64)
    pix = np.stack([cols, rows], axis=-1)
    X = inverse_deform_point(d, normalize_coords(pix, n), t)
    r = np.hypot(X[..., 0] - d.center[0], X[..., 1] - d.center[1])
    img = np.full((n, n), pattern.background)
    img[r < geometry.r_endo] = pattern.blood
    myo = (r >= geometry.r_endo) & (r <= geometry.r_epi)
    Xpix = denormalize_coords(X, n)
    depth = tag_depth(t, frame_count, pattern.half_life)
    img[myo] = tag_intensity(Xpix[myo], pattern, depth)
    if rng is not None and pattern.noise_sigma > 0:
        img = img + rng.normal(0.0, pattern.noise_sigma, img.shape)
    return np.clip(img, 0.0, 1.0)


@dataclass(frozen=True)
class SynthConfig:
    """Sampling ranges; radii and drift in pixels, converted internally."""

    frame_count: int = 20
    image_size: int = IMAGE_SIZE
    rings: int = DEFAULT_RINGS
    spokes: int = DEFAULT_SPOKES
    center_jitter: float = 4.0
    r_endo: tuple = (16.0, 22.0)
    wall: tuple = (10.0, 15.0)
    endo_contraction: tuple = (0.25, 0.45)
    twist: tuple = (-0.12, 0.12)
    t_es: tuple = (0.3, 0.45)
    s_end: tuple = (0.0, 0.1)
    drift: float = 1.5
    thickening_fraction: float = 0.0
    thickening: tuple = (0.1, 0.4)
    tag_spacing: tuple = (6.0, 9.0)
    tag_contrast: tuple = (0.7, 1.0)
    half_life: tuple = (10.0, 30.0)
    noise: tuple = (0.0, 0.03)
    myo: tuple = (0.7, 0.9)
    blood: tuple = (0.2, 0.35)
    background: tuple = (0.0, 0.1)
    randomize_angle: bool = True
    pixel_spacing_mm: float = 1.0
    frame_interval_s: float = 0.04
    max_retries: int = 20

    def __post_init__(self):
        if self.frame_count < 2:
            raise ValueError("need at least 2 frames")
        for name in ("r_endo", "wall", "endo_contraction", "twist", "t_es", "s_end", "thickening",
                     "tag_spacing", "tag_contrast", "half_life", "noise", "myo", "blood", "background"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"invalid range for {name}: {lo} > {hi}")
        if not (0 <= self.endo_contraction[0] and self.endo_contraction[1] < 1):
            raise ValueError("endo_contraction must lie in [0, 1)")
        if not (0 < self.t_es[0] and self.t_es[1] < 1):
            raise ValueError("t_es must lie in (0, 1)")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})

    def zero_motion(self) -> "SynthConfig":
        return replace(self, center_jitter=0.0, endo_contraction=(0.0, 0.0), twist=(0.0, 0.0),
                       drift=0.0, thickening_fraction=0.0)


def _u(rng, rng_pair):
    lo, hi = rng_pair
    return float(rng.uniform(lo, hi)) if hi > lo else float(lo)


def _sample_deformation(rng, cfg: SynthConfig, center_n, r_endo_n, r_epi_n):
    scale = 2.0 / (cfg.image_size - 1)
    thick = rng.uniform() < cfg.thickening_fraction
    c_endo = _u(rng, cfg.endo_contraction)
    ang = rng.uniform(0, 2 * np.pi)
    mag = rng.uniform(0, cfg.drift) * scale
    common = dict(center=tuple(center_n), twist=_u(rng, cfg.twist), t_es=_u(rng, cfg.t_es),
                  s_end=_u(rng, cfg.s_end), drift=(mag * math.cos(ang), mag * math.sin(ang)),
                  r_epi=r_epi_n)
    if thick:
        return AnalyticDeformation(mode=THICKENING, thickening=_u(rng, cfg.thickening), **common)
    k = r_endo_n ** 2 * (1.0 - (1.0 - c_endo) ** 2)
    return AnalyticDeformation(k_max=k, **common)


def _valid(d: AnalyticDeformation, r_endo_n, ts) -> bool:
    if d.mode == INCOMPRESSIBLE:
        return bool(np.all(r_endo_n ** 2 > d.k_max * d.s(ts)))
    g = 1.0 + d.thickening * d.s(ts)
    return bool(np.all(d.r_epi - (d.r_epi - r_endo_n) * g > 0))


def trajectories(d: AnalyticDeformation, grid0: LandmarkGrid, frame_count: int,
                 image_size: int = IMAGE_SIZE) -> LandmarkGrid:
    """Exact landmark positions for every frame, from frame-0 pixel positions."""
    X0 = normalize_coords(grid0.points[0], image_size)
    ts = np.arange(frame_count) / (frame_count - 1)
    traj = np.stack([deform_point(d, X0, t) for t in ts])
    return LandmarkGrid(grid0.rings, grid0.spokes, denormalize_coords(traj, image_size))


def generate_case(seed: int, config: SynthConfig = SynthConfig(), case_id: str | None = None) -> CaseRecord:
    """One synthetic case; a pure function of (seed, config)."""
    rng = np.random.default_rng(seed)
    n, T = config.image_size, config.frame_count
    scale = 2.0 / (n - 1)
    ts = np.arange(T) / (T - 1)
    center_pix = np.full(2, (n - 1) / 2.0) + rng.uniform(-config.center_jitter, config.center_jitter, 2) \
        if config.center_jitter > 0 else np.full(2, (n - 1) / 2.0)
    r_endo = _u(rng, config.r_endo)
    r_epi = r_endo + _u(rng, config.wall)
    center_n = normalize_coords(center_pix, n)
    r_endo_n, r_epi_n = r_endo * scale, r_epi * scale
    for _ in range(config.max_retries):
        d = _sample_deformation(rng, config, center_n, r_endo_n, r_epi_n)
        if _valid(d, r_endo_n, ts):
            break
    else:
        raise RuntimeError("could not sample a deformation satisfying the collapse-radius constraint")
    pattern = TagPattern(
        spacing=_u(rng, config.tag_spacing), contrast=_u(rng, config.tag_contrast),
        half_life=_u(rng, config.half_life), noise_sigma=_u(rng, config.noise),
        angle=float(rng.uniform(0, np.pi / 2)) if config.randomize_angle else 0.0,
        myo=_u(rng, config.myo), blood=_u(rng, config.blood), background=_u(rng, config.background),
    )
    geometry = Geometry(r_endo_n, r_epi_n, n)
    grid0 = make_landmark_grid(center_pix, r_endo, r_epi, config.rings, config.spokes)
    landmarks = trajectories(d, grid0, T, n)
    frames = np.stack([render_frame(d, pattern, t, geometry, rng, T) for t in ts])
    cid = case_id if case_id is not None else f"synth_{seed}"
    series = TagFrameSeries(frames, config.pixel_spacing_mm, config.frame_interval_s, cid, 0)
    meta = {"pattern": pattern.to_dict(), "r_endo": r_endo_n, "r_epi": r_epi_n, "seed": int(seed)}
    return CaseRecord(series, landmarks, d, meta)


def generate_dataset(seed: int, n_cases: int, config: SynthConfig = SynthConfig()) -> list[CaseRecord]:
    return [generate_case(seed ^ i, config, case_id=f"case_{i:04d}") for i in range(n_cases)]


@dataclass
class AnalyticStrain:
    circ: np.ndarray
    rad: np.ndarray

    @property
    def gcs(self) -> float:
        return float(self.circ.mean())

    @property
    def grs(self) -> float:
        return float(self.rad.mean())


def analytic_strain(d: AnalyticDeformation, grid: LandmarkGrid, t: float,
                    image_size: int = IMAGE_SIZE) -> AnalyticStrain:
    """Chord strains of a concentric ring x spoke grid, from the radial map alone.

    Twist and drift are isometries of each ring, so a circumferential chord at
    radius r scales by r'/r and a radial segment [r_j, r_j+1] becomes
    [r'_j, r'_j+1]. Pairs are ordered ring-major like the strain module.
    """
    X = normalize_coords(grid.points[0], image_size).reshape(grid.rings, grid.spokes, 2)
    rel = X - np.asarray(d.center)
    rho = np.hypot(rel[..., 0], rel[..., 1])
    if np.ptp(rho, axis=1).max() > 1e-9:
        raise ValueError("grid is not concentric with the deformation centre")
    rho = rho[:, 0]
    rp = d._radial(rho, d.s(t))
    circ = np.repeat(rp / rho - 1.0, grid.spokes)
    rad = np.repeat(np.diff(rp) / np.diff(rho) - 1.0, grid.spokes)
    return AnalyticStrain(circ, rad)

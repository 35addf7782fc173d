"""Inference (landmark and dense) and cohort evaluation of a trained model."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .core import LandmarkGrid, TagFrameSeries, normalize_coords, pixel_scale
from .diffnet import InrModel
from .strain import agreement, end_systole_index, gcs, grs
from .train import TrainConfig, train

log = logging.getLogger(__name__)


def _latents(model: InrModel, series: TagFrameSeries) -> torch.Tensor:
    frames = torch.tensor(np.asarray(series.frames), dtype=model.dtype)
    i0 = frames[:1].expand_as(frames)
    with torch.no_grad():
        return model.encode(i0, frames)


def displacement_at(model: InrModel, series: TagFrameSeries, points_px, frames=None) -> np.ndarray:
    """Displacement in pixels at reference points (N, 2) for each requested frame.

    Returns (len(frames), N, 2). One latent code per (I_0, I_t) pair.
    """
    n, T = series.image_size, series.frame_count
    frames = range(T) if frames is None else list(frames)
    X = torch.tensor(normalize_coords(points_px, n).reshape(-1, 2), dtype=model.dtype)
    z = _latents(model, series)
    out = []
    with torch.no_grad():
        for k in frames:
            amps = [a.unsqueeze(0) for a in model.modulate(z[k])]
            t = torch.full((X.shape[0], 1), k / (T - 1), dtype=model.dtype)
            u, _ = model.field(torch.cat([X, t], dim=1).unsqueeze(0), amps)
            out.append(u[0].double().numpy())
    return np.stack(out) * pixel_scale(n)


def track_landmarks(model: InrModel, series: TagFrameSeries, ref: LandmarkGrid) -> LandmarkGrid:
    """Predicted grid for every frame, frame 0 included (network output, unconstrained)."""
    X = ref.points[0]
    u = displacement_at(model, series, X)
    return LandmarkGrid(ref.rings, ref.spokes, X[None] + u)


def dense_grid(resolution: int, image_size: int) -> np.ndarray:
    """(R, R, 2) pixel coordinates spanning the image, row-major (y down)."""
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    s = np.linspace(0.0, image_size - 1.0, resolution)
    xx, yy = np.meshgrid(s, s)
    return np.stack([xx, yy], axis=-1)


def dense_displacement(model: InrModel, series: TagFrameSeries, resolution: int) -> np.ndarray:
    """Displacement (T, R, R, 2) in pixels sampled on an R x R grid."""
    pts = dense_grid(resolution, series.image_size)
    u = displacement_at(model, series, pts.reshape(-1, 2))
    return u.reshape(series.frame_count, resolution, resolution, 2)


@dataclass
class CaseEval:
    case_id: str
    point_sq: np.ndarray
    baseline_sq: np.ndarray
    gcs_pred: float
    gcs_ref: float
    grs_pred: float
    grs_ref: float
    es_frame: int
    predicted: LandmarkGrid = field(repr=False, default=None)


def evaluate_case(model: InrModel, case) -> CaseEval:
    ref = case.landmarks
    pred = track_landmarks(model, case.series, ref)
    # ED lengths come from the material points the network was queried at
    pts = np.array(pred.points)
    pts[0] = ref.points[0]
    pred = LandmarkGrid(ref.rings, ref.spokes, pts)
    es = end_systole_index(ref)
    sq = ((pred.points[1:] - ref.points[1:]) ** 2).sum(-1)
    base = ((ref.points[:1] - ref.points[1:]) ** 2).sum(-1)
    return CaseEval(case.case_id, sq, base,
                    gcs(pred, pred, 0, es)[0], gcs(ref, ref, 0, es)[0],
                    grs(pred, pred, 0, es)[0], grs(ref, ref, 0, es)[0], es, pred)


@dataclass
class CohortEval:
    cases: list
    spacing_mm: float = 1.0

    @property
    def point_error(self) -> float:
        return float(np.sqrt(np.concatenate([c.point_sq.ravel() for c in self.cases]).mean()) * self.spacing_mm)

    @property
    def baseline_error(self) -> float:
        return float(np.sqrt(np.concatenate([c.baseline_sq.ravel() for c in self.cases]).mean()) * self.spacing_mm)

    def gcs_stats(self):
        return agreement([c.gcs_pred for c in self.cases], [c.gcs_ref for c in self.cases])

    def grs_stats(self):
        return agreement([c.grs_pred for c in self.cases], [c.grs_ref for c in self.cases])

    def summary(self) -> dict:
        g, r = self.gcs_stats(), self.grs_stats()
        return {
            "point_error_mm": self.point_error,
            "baseline_error_mm": self.baseline_error,
            "gcs": 100 * float(np.mean([c.gcs_pred for c in self.cases])),
            "gcs_ref": 100 * float(np.mean([c.gcs_ref for c in self.cases])),
            "gcs_bias": g.bias, "gcs_sd": g.sd, "gcs_error": g.error,
            "grs": 100 * float(np.mean([c.grs_pred for c in self.cases])),
            "grs_ref": 100 * float(np.mean([c.grs_ref for c in self.cases])),
            "grs_bias": r.bias, "grs_sd": r.sd, "grs_error": r.error,
            "n_cases": len(self.cases),
        }


def evaluate_cases(model: InrModel, cases) -> CohortEval:
    cases = list(cases)
    if not cases:
        raise ValueError("no cases to evaluate")
    spacing = cases[0].series.pixel_spacing_mm
    return CohortEval([evaluate_case(model, c) for c in cases], spacing)


ABLATION_COLUMNS = ("alpha", "point_error", "gcs_bias", "gcs_error", "grs_bias", "grs_error")
DEFAULT_ALPHAS = (0.0, 0.001, 0.005, 0.01, 0.1)


def ablation_sweep(train_cases, test_cases, alphas, config: TrainConfig = TrainConfig(),
                   on_model=None) -> list[dict]:
    """Train one model per Jacobian weight (same seed and data order) and evaluate each."""
    alphas = list(alphas)
    if not alphas:
        raise ValueError("alphas must be non-empty")
    rows = []
    for a in alphas:
        cfg = replace(config, weights=replace(config.weights, alpha=float(a)))
        model, history = train(train_cases, cfg)
        if on_model is not None:
            on_model(a, model, history)
        s = evaluate_cases(model, test_cases).summary()
        row = {"alpha": float(a), "point_error": s["point_error_mm"],
               "gcs_bias": s["gcs_bias"], "gcs_error": s["gcs_error"],
               "grs_bias": s["grs_bias"], "grs_error": s["grs_error"]}
        log.info("alpha=%g  %s", a, row)
        rows.append(row)
    return rows

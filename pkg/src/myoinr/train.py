"""Adam and the end-to-end training loop."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import torch

from .core import CaseRecord, normalize_coords
from .diffnet import (
    InrModel,
    ModelConfig,
    Sample,
    flat_params,
    init_model,
    loss_gradients,
    param_spec,
    set_flat_params,
)
from .losses import LossWeights

log = logging.getLogger(__name__)

SUPERVISION_POINTS = "supervision_points"
RANDOM_INTERIOR = "random_interior"

DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 4
    epochs: int = 14
    seed: int = 0
    weights: LossWeights = LossWeights()
    omega: float = 15.0
    jacobian_sample_policy: str = SUPERVISION_POINTS
    model: ModelConfig = ModelConfig()
    dtype: str = "float32"
    workers: int = 1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.jacobian_sample_policy not in (SUPERVISION_POINTS, RANDOM_INTERIOR):
            raise ValueError(f"unknown jacobian_sample_policy {self.jacobian_sample_policy!r}")
        if self.dtype not in DTYPES:
            raise ValueError(f"dtype must be one of {sorted(DTYPES)}")

    def model_config(self) -> ModelConfig:
        return replace(self.model, omega=self.omega)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["weights"] = LossWeights(**d["weights"])
        d["model"] = ModelConfig.from_dict(d["model"])
        return cls(**d)


class Adam:
    """Adam over a flat parameter vector in canonical order."""

    def __init__(self, n: int, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8,
                 dtype=torch.float32):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m = torch.zeros(n, dtype=dtype)
        self.v = torch.zeros(n, dtype=dtype)
        self.step_count = 0

    def step(self, params: torch.Tensor, grads: torch.Tensor, blocks=None) -> torch.Tensor:
        if params.shape != grads.shape or grads.numel() != self.m.numel():
            raise ValueError("parameter, gradient and moment lengths differ")
        if not torch.isfinite(grads).all():
            raise FloatingPointError(f"non-finite gradient in {_bad_block(grads, blocks)}")
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        self.m.mul_(b1).add_(grads, alpha=1 - b1)
        self.v.mul_(b2).addcmul_(grads, grads, value=1 - b2)
        m_hat = self.m / (1 - b1 ** self.step_count)
        v_hat = self.v / (1 - b2 ** self.step_count)
        return params - self.lr * m_hat / (v_hat.sqrt() + self.eps)

    def state_dict(self) -> dict:
        return {"m": self.m.clone(), "v": self.v.clone(), "step": self.step_count}

    def load_state_dict(self, state: dict):
        self.m = state["m"].clone().to(self.m.dtype)
        self.v = state["v"].clone().to(self.v.dtype)
        self.step_count = int(state["step"])


def _bad_block(grads, blocks) -> str:
    if not blocks:
        return "parameters"
    i = 0
    for name, shape in blocks:
        n = int(np.prod(shape))
        if not torch.isfinite(grads[i:i + n]).all():
            return name
        i += n
    return "parameters"


def adam_step(model: InrModel, grads: torch.Tensor, opt: Adam) -> None:
    set_flat_params(model, opt.step(flat_params(model), grads, param_spec(model)))


def epoch_items(dataset, epoch: int, seed: int) -> list[tuple[int, int]]:
    """Every (case, target frame > 0) once, shuffled by (seed, epoch)."""
    items = [(c, k) for c, case in enumerate(dataset) for k in range(1, case.series.frame_count)]
    order = np.random.default_rng([seed, epoch]).permutation(len(items))
    return [items[i] for i in order]


def interior_points(ref: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples (by area) in the annulus spanned by a reference point set."""
    c = ref.mean(axis=0)
    r = np.linalg.norm(ref - c, axis=1)
    r0, r1 = r.min(), r.max()
    rad = np.sqrt(rng.uniform(r0 * r0, r1 * r1, n))
    th = rng.uniform(0, 2 * np.pi, n)
    return c + np.stack([rad * np.cos(th), rad * np.sin(th)], axis=1)


def make_sample(case: CaseRecord, k: int, jac_points=None) -> Sample:
    s = case.series
    n = s.image_size
    pts = normalize_coords(case.landmarks.points, n)
    return Sample(s.frames[0], s.frames[k], k / (s.frame_count - 1), pts[0], pts[k], jac_points)


def _check_dataset(dataset):
    if not dataset:
        raise ValueError("empty dataset")
    for case in dataset:
        if case.landmarks is None:
            raise ValueError(f"case {case.case_id} has no landmarks")
        if case.series.frame_count < 2:
            raise ValueError(f"case {case.case_id} has fewer than 2 frames")


@dataclass
class TrainState:
    model: InrModel
    optimizer: Adam
    epoch: int = 0
    history: list = field(default_factory=list)


def new_state(config: TrainConfig) -> TrainState:
    model = init_model(config.seed, config.model_config(), DTYPES[config.dtype])
    opt = Adam(sum(p.numel() for p in model.parameters()), config.learning_rate,
               dtype=DTYPES[config.dtype])
    return TrainState(model, opt)


def run_epoch(dataset, config: TrainConfig, state: TrainState, batch_log=None) -> dict:
    epoch = state.epoch
    items = epoch_items(dataset, epoch, config.seed)
    w = config.weights
    sums = {"pos": 0.0, "jacobian": 0.0, "latent": 0.0, "total": 0.0}
    n_batches = 0
    for b in range(0, len(items), config.batch_size):
        chunk = items[b:b + config.batch_size]
        batch = []
        for j, (c, k) in enumerate(chunk):
            case = dataset[c]
            jp = None
            if config.jacobian_sample_policy == RANDOM_INTERIOR:
                ref = normalize_coords(case.landmarks.points[0], case.series.image_size)
                rng = np.random.default_rng([config.seed, epoch, b, j])
                jp = interior_points(ref, ref.shape[0], rng)
            batch.append(make_sample(case, k, jp))
        bundle = loss_gradients(state.model, batch, w.alpha, w.beta, workers=config.workers)
        adam_step(state.model, bundle.grad, state.optimizer)
        for key in ("pos", "jacobian", "latent"):
            sums[key] += bundle.parts[key]
        sums["total"] += bundle.loss
        n_batches += 1
        if batch_log is not None:
            batch_log.append({"epoch": epoch, "batch": n_batches - 1, "total": bundle.loss, **bundle.parts})
    state.epoch += 1
    row = {"epoch": epoch, **{k: v / n_batches for k, v in sums.items()}}
    state.history.append(row)
    return row


def train(dataset, config: TrainConfig = TrainConfig(), state: TrainState | None = None,
          on_epoch=None, batch_log=None):
    """Train (or resume) to ``config.epochs``; returns (model, per-epoch history)."""
    _check_dataset(dataset)
    if state is None:
        state = new_state(config)
    while state.epoch < config.epochs:
        t0 = time.perf_counter()
        row = run_epoch(dataset, config, state, batch_log)
        log.info("epoch %d  pos %.3e  jac %.3e  lat %.3e  total %.3e  (%.1fs)", row["epoch"],
                 row["pos"], row["jacobian"], row["latent"], row["total"], time.perf_counter() - t0)
        if on_epoch is not None:
            on_epoch(state)
    return state.model, state.history

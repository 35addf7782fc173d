"""Loss terms. Each accepts torch tensors (differentiable) or array-likes."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch


def _t(x) -> torch.Tensor:
    return x if torch.is_tensor(x) else torch.as_tensor(x, dtype=torch.float64)


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1e-3
    beta: float = 1e-4

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("loss weights must be nonnegative")


def loss_pos(predicted, target) -> torch.Tensor:
    """Mean over points of the squared Euclidean distance."""
    p, q = _t(predicted), _t(target)
    if p.shape != q.shape:
        raise ValueError(f"cardinality mismatch: {tuple(p.shape)} vs {tuple(q.shape)}")
    if p.numel() == 0:
        raise ValueError("empty point set")
    return ((p - q) ** 2).sum(dim=-1).mean()


def loss_latent(z) -> torch.Tensor:
    z = _t(z)
    if z.numel() == 0:
        raise ValueError("empty latent code")
    return (z ** 2).mean()


def jacobian_det(J) -> torch.Tensor:
    J = _t(J)
    return J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]


def loss_jacobian(jacobians) -> torch.Tensor:
    """Mean |1 - det J| over a stack of 2x2 matrices."""
    J = _t(jacobians)
    if J.dim() == 2:
        J = J.unsqueeze(0)
    if J.shape[0] == 0:
        raise ValueError("no Jacobians given")
    return (1.0 - jacobian_det(J)).abs().mean()


def total_loss(pos, jac, lat, weights: LossWeights = LossWeights()):
    parts = (pos, jac, lat)
    for name, v in zip(("pos", "jacobian", "latent"), parts):
        if not math.isfinite(float(v)):
            raise FloatingPointError(f"non-finite loss term: {name}")
    return pos + weights.alpha * jac + weights.beta * lat

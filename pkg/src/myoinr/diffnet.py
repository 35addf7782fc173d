"""Latent-conditioned sine network for displacement, plus its derivatives.

The network maps (x, y, t) and a per-case latent code Z to a displacement u.
Z comes from a strided CNN over the image pair (I_0, I_t); each sine layer is
scaled elementwise by amplitudes a_i = M_i(Z) from a small ReLU perceptron.

Input-space Jacobians are propagated in forward mode alongside the values
(tangent of sin is cos). Because the tangent expressions are ordinary torch
ops, reverse accumulation over the parameters traverses them, which is what
makes the Jacobian-determinant loss trainable.

Canonical parameter order (checkpoints, flat gradient vectors) is the
registration order of ``InrModel``: encoder convolutions then projection,
then MLP layers (input, hidden..., output), then modulation networks by
layer index. Each tensor is flattened row-major, weight before bias.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .losses import loss_jacobian, loss_latent, loss_pos


@dataclass(frozen=True)
class ModelConfig:
    hidden_size: int = 256
    hidden_layers: int = 3
    latent_size: int = 32
    omega: float = 15.0
    encoder_channels: tuple = (16, 32, 64, 128, 256)
    image_size: int = 128

    def __post_init__(self):
        if self.omega <= 0:
            raise ValueError("omega must be positive")
        if self.hidden_layers < 1 or self.hidden_size < 1 or self.latent_size < 1:
            raise ValueError("sizes must be positive")
        if len(self.encoder_channels) < 1:
            raise ValueError("encoder needs at least one convolution")
        object.__setattr__(self, "encoder_channels", tuple(int(c) for c in self.encoder_channels))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_channels"] = list(self.encoder_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{**d, "encoder_channels": tuple(d["encoder_channels"])})


TINY_CONFIG = ModelConfig(hidden_size=8, hidden_layers=2, latent_size=4,
                          encoder_channels=(2, 3, 4, 4, 4), image_size=32)


def mlp_param_count(cfg: ModelConfig, in_features: int = 3, out_features: int = 2) -> int:
    L = cfg.hidden_size
    return (in_features * L + L) + (cfg.hidden_layers - 1) * (L * L + L) + (L * out_features + out_features)


class ConvEncoder(nn.Module):
    """Stride-2 3x3 convolutions with ReLU, global average pool, affine projection."""

    def __init__(self, channels, latent_size: int, in_channels: int = 2):
        super().__init__()
        convs = []
        prev = in_channels
        for c in channels:
            convs.append(nn.Conv2d(prev, c, kernel_size=3, stride=2, padding=1))
            prev = c
        self.convs = nn.ModuleList(convs)
        self.proj = nn.Linear(prev, latent_size)

    def forward(self, pair: torch.Tensor) -> torch.Tensor:
        x = pair
        for conv in self.convs:
            x = F.relu(conv(x))
        return self.proj(x.mean(dim=(-2, -1)))


class Modulator(nn.Module):
    def __init__(self, latent_size: int, hidden_size: int):
        super().__init__()
        self.hidden = nn.Linear(latent_size, hidden_size)
        self.out = nn.Linear(hidden_size, hidden_size)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.out(F.relu(self.hidden(z)))


class InrModel(nn.Module):
    def __init__(self, config: ModelConfig = ModelConfig()):
        super().__init__()
        self.config = config
        L = config.hidden_size
        self.omega = float(config.omega)
        self.encoder = ConvEncoder(config.encoder_channels, config.latent_size)
        self.layers = nn.ModuleList(
            [nn.Linear(3, L)] + [nn.Linear(L, L) for _ in range(config.hidden_layers - 1)]
        )
        self.out = nn.Linear(L, 2)
        self.modulators = nn.ModuleList(
            [Modulator(config.latent_size, L) for _ in range(config.hidden_layers)]
        )

    @property
    def dtype(self) -> torch.dtype:
        return self.out.weight.dtype

    def encode(self, i0: torch.Tensor, it: torch.Tensor) -> torch.Tensor:
        """(..., H, W) image pairs -> (..., latent). Channel order is (I_0, I_t)."""
        size = self.config.image_size
        if i0.shape[-2:] != (size, size) or it.shape[-2:] != (size, size):
            raise ValueError(f"images must be {size}x{size}, got {tuple(i0.shape[-2:])} and {tuple(it.shape[-2:])}")
        pair = torch.stack([i0, it], dim=-3)
        squeeze = pair.dim() == 3
        if squeeze:
            pair = pair.unsqueeze(0)
        z = self.encoder(pair)
        return z[0] if squeeze else z

    def modulate(self, z: torch.Tensor) -> list[torch.Tensor]:
        return [m(z) for m in self.modulators]

    def field(self, coords: torch.Tensor, amps, need_jac: bool = False):
        """Evaluate u (and optionally dX'/dX) at coords (B, N, 3) with amplitudes (B, L).

        Returns u of shape (B, N, 2) and J of shape (B, N, 2, 2) or None.
        """
        if not torch.isfinite(coords).all():
            raise ValueError("non-finite input coordinates")
        w = self.omega
        h = coords
        tan = None
        for i, (layer, a) in enumerate(zip(self.layers, amps)):
            pre = w * layer(h)
            a = a.unsqueeze(-2)
            if need_jac:
                if i == 0:
                    dpre = w * layer.weight[:, :2]
                else:
                    dpre = w * torch.einsum("ol,bnlk->bnok", layer.weight, tan)
                tan = (a * torch.cos(pre)).unsqueeze(-1) * dpre
            h = a * torch.sin(pre)
        u = self.out(h)
        if not need_jac:
            return u, None
        du = torch.einsum("ol,bnlk->bnok", self.out.weight, tan)
        eye = torch.eye(2, dtype=du.dtype, device=du.device)
        return u, eye + du

    def forward(self, coords, z, need_jac: bool = False):
        return self.field(coords, self.modulate(z), need_jac)


def _uniform_(t: torch.Tensor, bound: float, gen: torch.Generator):
    with torch.no_grad():
        t.copy_(torch.rand(t.shape, generator=gen, dtype=torch.float64).mul_(2 * bound).sub_(bound).to(t.dtype))


def init_model(seed: int = 0, config: ModelConfig = ModelConfig(),
               dtype: torch.dtype = torch.float32) -> InrModel:
    """Deterministic initialization.

    MLP weights follow the sine-network convention (first layer +-1/n, later
    layers +-sqrt(6/n)/omega). ReLU-fed layers use He-uniform, projections
    +-1/sqrt(n). Biases are zero except the modulators' output bias, which
    is one so every a_i starts near 1 and the sine layers are live.
    """
    model = InrModel(config)
    gen = torch.Generator().manual_seed(int(seed))
    w = config.omega
    for name, p in model.named_parameters():
        if name.endswith("bias"):
            with torch.no_grad():
                p.fill_(1.0 if name.startswith("modulators.") and ".out." in name else 0.0)
            continue
        fan_in = p[0].numel()
        if name == "layers.0.weight":
            bound = 1.0 / fan_in
        elif name.startswith("layers.") or name.startswith("out."):
            bound = math.sqrt(6.0 / fan_in) / w
        elif name.startswith("encoder.convs.") or ".hidden." in name:
            bound = math.sqrt(6.0 / fan_in)
        else:
            bound = 1.0 / math.sqrt(fan_in)
        _uniform_(p, bound, gen)
    return model.to(dtype)


def param_spec(model: InrModel) -> list[tuple[str, tuple]]:
    return [(n, tuple(p.shape)) for n, p in model.named_parameters()]


def param_count(model: InrModel) -> int:
    return sum(p.numel() for p in model.parameters())


def flat_params(model: InrModel) -> torch.Tensor:
    return torch.cat([p.detach().reshape(-1) for p in model.parameters()])


def set_flat_params(model: InrModel, flat) -> None:
    flat = torch.as_tensor(flat)
    if flat.numel() != param_count(model):
        raise ValueError(f"expected {param_count(model)} values, got {flat.numel()}")
    i = 0
    with torch.no_grad():
        for p in model.parameters():
            n = p.numel()
            p.copy_(flat[i:i + n].reshape(p.shape).to(p.dtype))
            i += n


def _tensor(x, model: InrModel) -> torch.Tensor:
    if torch.is_tensor(x):
        return x.to(model.dtype)
    return torch.tensor(np.asarray(x), dtype=model.dtype)


def _query(X, t, model):
    X = _tensor(X, model)
    single = X.dim() == 1
    X = X.reshape(-1, 2)
    t = _tensor(t, model).reshape(-1)
    if t.numel() == 1:
        t = t.expand(X.shape[0])
    coords = torch.cat([X, t[:, None]], dim=1).unsqueeze(0)
    return coords, single


def encode(model: InrModel, i0, it) -> torch.Tensor:
    with torch.no_grad():
        return model.encode(_tensor(i0, model), _tensor(it, model))


def modulate(model: InrModel, z) -> list[torch.Tensor]:
    with torch.no_grad():
        return model.modulate(_tensor(z, model))


def forward(model: InrModel, X, t, z=None, amps=None) -> torch.Tensor:
    """Displacement u at normalized X (2,) or (N, 2) and time t, for one latent code.

    ``amps`` overrides the modulation networks (one (L,) vector per layer).
    """
    coords, single = _query(X, t, model)
    with torch.no_grad():
        if amps is None:
            amps = model.modulate(_tensor(z, model))
        amps = [_tensor(a, model).reshape(1, -1) for a in amps]
        u, _ = model.field(coords, amps)
    return u[0, 0] if single else u[0]


def input_jacobian(model: InrModel, X, t, z=None, amps=None) -> torch.Tensor:
    """dX'/dX = I + du/dX at X, shape (2, 2) or (N, 2, 2)."""
    coords, single = _query(X, t, model)
    with torch.no_grad():
        if amps is None:
            amps = model.modulate(_tensor(z, model))
        amps = [_tensor(a, model).reshape(1, -1) for a in amps]
        _, J = model.field(coords, amps, need_jac=True)
    return J[0, 0] if single else J[0]


@dataclass
class Sample:
    """One supervision item: image pair, reference points, target points at time t.

    Coordinates are normalized. ``jac_points`` defaults to ``ref``.
    """

    i0: np.ndarray
    it: np.ndarray
    t: float
    ref: np.ndarray
    target: np.ndarray
    jac_points: np.ndarray | None = None


@dataclass
class GradientBundle:
    grad: torch.Tensor
    loss: float
    parts: dict = field(default_factory=dict)


def sample_terms(model: InrModel, s: Sample, need_jac: bool = True) -> dict:
    """Loss terms for one sample, as differentiable scalars."""
    i0, it = _tensor(s.i0, model), _tensor(s.it, model)
    z = model.encode(i0, it)
    amps = [a.unsqueeze(0) for a in model.modulate(z)]
    ref = _tensor(s.ref, model)
    tcol = torch.full((ref.shape[0], 1), float(s.t), dtype=model.dtype)
    jac_pts = ref if s.jac_points is None else _tensor(s.jac_points, model)
    same = s.jac_points is None
    coords = torch.cat([ref, tcol], dim=1).unsqueeze(0)
    if need_jac and same:
        u, J = model.field(coords, amps, need_jac=True)
    else:
        u, _ = model.field(coords, amps)
        J = None
        if need_jac:
            tj = torch.full((jac_pts.shape[0], 1), float(s.t), dtype=model.dtype)
            _, J = model.field(torch.cat([jac_pts, tj], dim=1).unsqueeze(0), amps, need_jac=True)
    pred = ref + u[0]
    terms = {
        "pos": loss_pos(pred, _tensor(s.target, model)),
        "latent": loss_latent(z),
    }
    if J is not None:
        terms["jacobian"] = loss_jacobian(J[0])
    return terms


def weighted(terms: dict, alpha: float, beta: float) -> torch.Tensor:
    total = terms["pos"]
    if alpha:
        total = total + alpha * terms["jacobian"]
    if beta:
        total = total + beta * terms["latent"]
    return total


def _item_gradient(model, s, alpha, beta, params):
    terms = sample_terms(model, s, need_jac=True)
    for name, v in terms.items():
        if not torch.isfinite(v):
            raise FloatingPointError(f"non-finite loss term: {name}")
    total = weighted(terms, alpha, beta)
    grads = torch.autograd.grad(total, params, allow_unused=True)
    flat = torch.cat([
        (g if g is not None else torch.zeros_like(p)).reshape(-1) for g, p in zip(grads, params)
    ])
    return flat, total.detach(), {k: v.detach() for k, v in terms.items()}


def loss_gradients(model: InrModel, batch, alpha: float = 1e-3, beta: float = 1e-4,
                   workers: int = 1) -> GradientBundle:
    """Mean batch loss and its exact parameter gradient in canonical order.

    Items are differentiated independently and reduced in item order, so the
    result does not depend on ``workers``.
    """
    batch = list(batch)
    if not batch:
        raise ValueError("empty batch")
    params = list(model.parameters())
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(lambda s: _item_gradient(model, s, alpha, beta, params), batch))
    else:
        results = [_item_gradient(model, s, alpha, beta, params) for s in batch]
    grad = results[0][0].clone()
    loss = results[0][1].clone()
    parts = {k: v.clone() for k, v in results[0][2].items()}
    for g, l, p in results[1:]:
        grad += g
        loss += l
        for k in parts:
            parts[k] += p[k]
    n = len(batch)
    return GradientBundle(grad / n, float(loss / n), {k: float(v / n) for k, v in parts.items()})

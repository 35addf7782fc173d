"""Finite-difference verification of the analytic derivatives, in float64.

Three checks:

* input Jacobian dX'/dX vs central differences of the displacement,
* parameter gradients of each loss term and of the weighted total vs central
  differences over every parameter of a tiny model,
* linearity: grad(total) == grad(pos) + alpha grad(J) + beta grad(Z).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .diffnet import (
    TINY_CONFIG,
    InrModel,
    ModelConfig,
    Sample,
    flat_params,
    init_model,
    input_jacobian,
    sample_terms,
    set_flat_params,
    weighted,
)

JACOBIAN_ATOL = 1e-6
GRADIENT_RTOL = 1e-4
LINEARITY_ATOL = 1e-12
FD_STEP = 1e-5
# relative errors use max(|analytic|, |fd|, REL_FLOOR) as denominator
REL_FLOOR = 1e-7


@dataclass
class CheckResult:
    name: str
    max_error: float
    threshold: float
    detail: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_error) and self.max_error <= self.threshold)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<28s} max_err={self.max_error:.3e}  threshold={self.threshold:.0e}"


def fd_input_jacobian(model: InrModel, X, t, amps, h: float = FD_STEP) -> np.ndarray:
    """Central differences of X + u(X) along x and y."""
    amps = [torch.as_tensor(a, dtype=torch.float64).reshape(1, -1) for a in amps]
    J = np.zeros((2, 2))
    with torch.no_grad():
        for j in range(2):
            step = np.zeros(2)
            step[j] = h
            vals = []
            for sgn in (1.0, -1.0):
                p = np.asarray(X, dtype=np.float64) + sgn * step
                c = torch.tensor([[[p[0], p[1], t]]], dtype=torch.float64)
                u, _ = model.field(c, amps)
                vals.append(p + u[0, 0].numpy())
            J[:, j] = (vals[0] - vals[1]) / (2 * h)
    return J


def check_input_jacobian(seed: int = 0, draws: int = 100, config: ModelConfig = ModelConfig(),
                         jacobian_fn=input_jacobian) -> CheckResult:
    """Analytic vs finite-difference Jacobian over random (model, X, t, Z) draws."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    models_per = 10
    model = None
    for i in range(draws):
        if i % models_per == 0:
            model = init_model(int(rng.integers(2**31)), config, torch.float64)
        z = torch.tensor(rng.normal(size=config.latent_size))
        with torch.no_grad():
            amps = [a.numpy() for a in model.modulate(z)]
        X = rng.uniform(-1, 1, 2)
        t = float(rng.uniform(0, 1))
        Ja = np.asarray(jacobian_fn(model, X, t, amps=amps), dtype=np.float64)
        Jf = fd_input_jacobian(model, X, t, amps)
        worst = max(worst, float(np.abs(Ja - Jf).max()))
    return CheckResult("input_jacobian", worst, JACOBIAN_ATOL, {"draws": draws})


def tiny_batch(seed: int, config: ModelConfig = TINY_CONFIG, n_items: int = 2, n_points: int = 12):
    rng = np.random.default_rng(seed)
    n = config.image_size
    batch = []
    for _ in range(n_items):
        ref = rng.uniform(-0.6, 0.6, (n_points, 2))
        batch.append(Sample(
            i0=rng.uniform(0, 1, (n, n)), it=rng.uniform(0, 1, (n, n)),
            t=float(rng.uniform(0.1, 1.0)), ref=ref,
            target=ref + rng.normal(0, 0.05, ref.shape),
        ))
    return batch


TERMS = ("pos", "jacobian", "latent")


def batch_terms(model: InrModel, batch) -> dict:
    acc = None
    for s in batch:
        terms = sample_terms(model, s)
        acc = terms if acc is None else {k: acc[k] + terms[k] for k in TERMS}
    return {k: v / len(batch) for k, v in acc.items()}


def analytic_term_grads(model: InrModel, batch, alpha: float, beta: float) -> dict:
    params = list(model.parameters())
    terms = batch_terms(model, batch)
    out = {}
    for name, value in list(terms.items()) + [("total", weighted(terms, alpha, beta))]:
        g = torch.autograd.grad(value, params, retain_graph=True, allow_unused=True)
        out[name] = torch.cat([(gi if gi is not None else torch.zeros_like(p)).reshape(-1)
                               for gi, p in zip(g, params)]).numpy()
    return out


def fd_term_grads(model: InrModel, batch, alpha: float, beta: float, h: float = FD_STEP) -> dict:
    """Central differences of every loss term w.r.t. every parameter."""
    theta = flat_params(model).clone()
    n = theta.numel()
    out = {k: np.zeros(n) for k in TERMS + ("total",)}

    def evaluate(vec):
        set_flat_params(model, vec)
        with torch.no_grad():
            terms = batch_terms(model, batch)
            vals = {k: float(v) for k, v in terms.items()}
            vals["total"] = float(weighted(terms, alpha, beta))
        return vals

    try:
        for i in range(n):
            plus = theta.clone()
            plus[i] += h
            minus = theta.clone()
            minus[i] -= h
            fp, fm = evaluate(plus), evaluate(minus)
            for k in out:
                out[k][i] = (fp[k] - fm[k]) / (2 * h)
    finally:
        set_flat_params(model, theta)
    return out


def relative_error(a: np.ndarray, f: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), REL_FLOOR)
    return float((np.abs(a - f) / denom).max())


def check_param_gradients(seed: int = 0, alpha: float = 0.3, beta: float = 0.2,
                          config: ModelConfig = TINY_CONFIG, grad_fn=analytic_term_grads) -> list[CheckResult]:
    """Per-term and total-loss parameter gradients vs finite differences, plus linearity.

    The weights are deliberately O(1) so every term matters in the total.
    """
    model = init_model(seed, config, torch.float64)
    _perturb(model, seed)
    batch = tiny_batch(seed, config)
    analytic = grad_fn(model, batch, alpha, beta)
    fd = fd_term_grads(model, batch, alpha, beta)
    results = [CheckResult(f"param_grad[{k}]", relative_error(analytic[k], fd[k]), GRADIENT_RTOL)
               for k in TERMS + ("total",)]
    combo = analytic["pos"] + alpha * analytic["jacobian"] + beta * analytic["latent"]
    results.append(CheckResult("linearity", float(np.abs(combo - analytic["total"]).max()), LINEARITY_ATOL))
    return results


def _perturb(model: InrModel, seed: int):
    """Nonzero biases so every parameter has a generic gradient."""
    g = torch.Generator().manual_seed(seed + 7)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name.endswith("bias"):
                p.add_(0.1 * torch.randn(p.shape, generator=g, dtype=p.dtype))


def corrupted_jacobian(model, X, t, z=None, amps=None):
    """Test hook: analytic Jacobian with a deliberate error."""
    return input_jacobian(model, X, t, z=z, amps=amps) + 1e-3


def corrupted_grads(model, batch, alpha, beta):
    out = analytic_term_grads(model, batch, alpha, beta)
    return {k: v * (1 + 1e-3) for k, v in out.items()}


def run_gradcheck(seed: int = 0, draws: int = 100, corrupt: bool = False) -> list[CheckResult]:
    t0 = time.perf_counter()
    jac_fn = corrupted_jacobian if corrupt else input_jacobian
    grad_fn = corrupted_grads if corrupt else analytic_term_grads
    results = [check_input_jacobian(seed, draws, jacobian_fn=jac_fn)]
    results += check_param_gradients(seed, grad_fn=grad_fn)
    elapsed = time.perf_counter() - t0
    for r in results:
        r.detail["elapsed_s"] = elapsed
    return results

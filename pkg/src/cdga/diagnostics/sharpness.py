"""Loss-landscape sharpness: worst loss increase within a parameter ball.

sharpness(rho) = max over ||eps||_2 <= rho of L(theta + eps) - L(theta),
estimated by projected gradient ascent with random restarts.  The zero
perturbation is always a candidate, so the estimate is never negative; it
is a lower bound on the true maximum.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import torch
import torch.nn.functional as F

DEFAULT_ASCENT_STEPS = 20
DEFAULT_RESTARTS = 3


@dataclass(frozen=True)
class SharpnessTrace:
    """Sharpness along a training trajectory, one value per recorded step."""

    steps: tuple[int, ...]
    values: tuple[float, ...]
    rho: float

    def __post_init__(self) -> None:
        if len(self.steps) != len(self.values):
            raise ValueError("steps and values must align")
        if any(v < -1e-8 for v in self.values):
            raise ValueError("sharpness values cannot be negative")

    def to_json(self) -> dict:
        return {"rho": self.rho, "steps": list(self.steps), "values": list(self.values)}


def _ball_sample(params: Sequence[torch.Tensor], rho: float,
                 gen: torch.Generator) -> list[torch.Tensor]:
    eps = [torch.randn(p.shape, generator=gen, dtype=p.dtype) for p in params]
    norm = torch.sqrt(sum((e * e).sum() for e in eps))
    if float(norm) == 0.0:
        return [torch.zeros_like(p) for p in params]
    dim = sum(e.numel() for e in eps)
    radius = rho * float(torch.rand((), generator=gen)) ** (1.0 / dim)
    return [e * (radius / norm) for e in eps]


def sharpness_gap(
    loss_fn: Callable[[], torch.Tensor],
    params: Sequence[torch.Tensor],
    rho: float,
    *,
    steps: int = DEFAULT_ASCENT_STEPS,
    restarts: int = DEFAULT_RESTARTS,
    step_size: float | None = None,
    seed: int = 0,
) -> float:
    """Estimate the sharpness of an arbitrary differentiable loss.

    ``loss_fn`` must evaluate the loss at the parameters' current values.
    Ascent takes normalized gradient steps of ``step_size`` (default rho/4)
    projected back onto the ball; the best gap over every probe point and
    every restart is returned.  Parameters are restored exactly afterwards.
    A non-finite loss at any probe is an error.
    """
    params = [p for p in params if p.requires_grad]
    if not params:
        raise ValueError("no trainable parameters to perturb")
    if rho < 0:
        raise ValueError("rho must be non-negative")
    if rho == 0:
        return 0.0
    eta = step_size if step_size is not None else rho / 4.0
    originals = [p.detach().clone() for p in params]
    gen = torch.Generator().manual_seed(seed)

    def probe() -> torch.Tensor:
        loss = loss_fn()
        if not torch.isfinite(loss):
            raise ValueError("non-finite loss while probing sharpness")
        return loss

    best = 0.0
    try:
        with torch.no_grad():
            base = float(probe())
        for _ in range(restarts):
            eps = _ball_sample(params, rho, gen)
            for _ in range(steps):
                for p, o, e in zip(params, originals, eps):
                    p.data = o + e
                loss = probe()
                best = max(best, float(loss.detach()) - base)
                grads = torch.autograd.grad(loss, params, allow_unused=True)
                grads = [
                    g if g is not None else torch.zeros_like(p)
                    for g, p in zip(grads, params)
                ]
                gnorm = float(torch.sqrt(sum((g * g).sum() for g in grads)))
                if gnorm == 0.0:
                    break
                eps = [e + eta * g / gnorm for e, g in zip(eps, grads)]
                enorm = float(torch.sqrt(sum((e * e).sum() for e in eps)))
                if enorm > rho:
                    eps = [e * (rho / enorm) for e in eps]
            for p, o, e in zip(params, originals, eps):
                p.data = o + e
            with torch.no_grad():
                best = max(best, float(probe()) - base)
    finally:
        for p, o in zip(params, originals):
            p.data = o.clone()
    return max(best, 0.0)


def sharpness(
    model,
    x: torch.Tensor,
    y: torch.Tensor,
    rho: float,
    *,
    steps: int = DEFAULT_ASCENT_STEPS,
    restarts: int = DEFAULT_RESTARTS,
    step_size: float | None = None,
    seed: int = 0,
) -> float:
    """Sharpness of a classifier's mean cross-entropy on a fixed batch."""
    was_training = model.training
    model.eval()

    def loss_fn() -> torch.Tensor:
        return F.cross_entropy(model(x), y)

    try:
        return sharpness_gap(
            loss_fn,
            list(model.parameters()),
            rho,
            steps=steps,
            restarts=restarts,
            step_size=step_size,
            seed=seed,
        )
    finally:
        model.train(was_training)


def gradient_norm(loss_fn: Callable[[], torch.Tensor],
                  params: Sequence[torch.Tensor]) -> float:
    """L2 norm of the loss gradient; the rho -> 0 slope of sharpness."""
    params = [p for p in params if p.requires_grad]
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    total = 0.0
    for g in grads:
        if g is not None:
            total += float((g * g).sum())
    return total ** 0.5

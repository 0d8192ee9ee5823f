"""White-box adversarial attacks and robustness curves.

FGSM takes one signed-gradient step of size rho; PGD iterates smaller
signed steps, projecting back into the L-infinity ball around the clean
input and the valid pixel range after every step.  PGD with one iteration
and step size >= rho reproduces FGSM exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F


def _loss_grad(model, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    x = x.detach().requires_grad_(True)
    loss = F.cross_entropy(model(x), y)
    grad, = torch.autograd.grad(loss, x)
    if not torch.isfinite(grad).all():
        raise ValueError("non-finite attack gradient")
    return grad


def fgsm(
    model,
    x: torch.Tensor,
    y: torch.Tensor,
    rho: float,
    clip: tuple[float, float] = (0.0, 1.0),
) -> torch.Tensor:
    """x + rho * sign(grad), clamped to the pixel range."""
    if rho < 0:
        raise ValueError("rho must be non-negative")
    if rho == 0:
        return x.detach().clone()
    grad = _loss_grad(model, x, y)
    return torch.clamp(x.detach() + rho * grad.sign(), *clip)


def pgd(
    model,
    x: torch.Tensor,
    y: torch.Tensor,
    rho: float,
    step_size: float | None = None,
    iters: int = 10,
    clip: tuple[float, float] = (0.0, 1.0),
    random_start: bool = False,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Projected gradient descent within an L-infinity ball of radius rho."""
    if rho < 0:
        raise ValueError("rho must be non-negative")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if rho == 0:
        return x.detach().clone()
    if step_size is None:
        step_size = rho / 4.0
    x = x.detach()
    if random_start:
        delta = (torch.rand(x.shape, generator=generator) * 2.0 - 1.0) * rho
        delta = torch.clamp(x + delta, *clip) - x
    else:
        delta = torch.zeros_like(x)
    for _ in range(iters):
        grad = _loss_grad(model, torch.clamp(x + delta, *clip), y)
        delta = torch.clamp(delta + step_size * grad.sign(), -rho, rho)
    return torch.clamp(x + delta, *clip)


DEFAULT_RHO_GRID = (0.0, 1e-4, 1e-3, 1e-2, 0.1)


@dataclass(frozen=True)
class RobustnessCurve:
    attack: str
    grid: tuple[float, ...]
    accuracies: tuple[float, ...]
    # Resolved attack parameters (fixed rho and step size for pgd), kept so
    # every report states exactly what was run.
    params: tuple[tuple[str, float], ...] = ()

    def __post_init__(self) -> None:
        if len(self.grid) != len(self.accuracies):
            raise ValueError("grid and accuracies must align")
        if any(not 0.0 <= a <= 1.0 for a in self.accuracies):
            raise ValueError("accuracies must lie in [0, 1]")

    def to_json(self) -> dict:
        return {
            "attack": self.attack,
            "grid": list(self.grid),
            "accuracies": list(self.accuracies),
            "params": dict(self.params),
        }


def _accuracy(model, x: torch.Tensor, y: torch.Tensor) -> float:
    with torch.no_grad():
        return float((model(x).argmax(dim=1) == y).double().mean())


def robustness_curve(
    model,
    x: torch.Tensor,
    y: torch.Tensor,
    *,
    attack: str = "fgsm",
    grid: tuple[float, ...] = DEFAULT_RHO_GRID,
    rho: float | None = None,
    step_size: float | None = None,
    iters: int = 10,
    clip: tuple[float, float] = (0.0, 1.0),
) -> RobustnessCurve:
    """Accuracy under attack across a sweep.

    For FGSM the grid sweeps the budget rho (rho = 0 evaluates the clean
    inputs, so that point equals clean accuracy exactly).  For PGD the grid
    sweeps the iteration count K at a fixed budget ``rho``.
    """
    was_training = model.training
    model.eval()
    params: dict[str, float] = {}
    try:
        accuracies = []
        if attack == "fgsm":
            for r in grid:
                x_adv = fgsm(model, x, y, float(r), clip=clip)
                accuracies.append(_accuracy(model, x_adv, y))
        elif attack == "pgd":
            if rho is None:
                raise ValueError("pgd curves need a fixed rho; the grid sweeps iterations")
            resolved_step = rho / 4.0 if step_size is None else step_size
            params = {"rho": float(rho), "step_size": float(resolved_step)}
            for k in grid:
                if int(k) != k or k < 1:
                    raise ValueError("pgd iteration grid must hold positive integers")
                x_adv = pgd(model, x, y, rho, step_size=resolved_step, iters=int(k), clip=clip)
                accuracies.append(_accuracy(model, x_adv, y))
        else:
            raise ValueError(f"unknown attack {attack!r}")
    finally:
        model.train(was_training)
    return RobustnessCurve(
        attack=attack,
        grid=tuple(float(g) for g in grid),
        accuracies=tuple(accuracies),
        params=tuple(sorted(params.items())),
    )

"""Finite-difference verification of autograd parameter gradients."""
import typing
import structlog

import numpy as np
import torch

logger = structlog.get_logger(__name__)

__all__ = ('GradientCheck', 'relative_error', 'finite_difference_check')

REFINEMENTS = (1.0, 0.1, 0.01)


class GradientCheck(typing.NamedTuple):
    max_error: float
    checked: int
    worst: typing.Optional[typing.Tuple[str, int, float, float]]  # name, flat index, analytic, numeric


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def _central_difference(loss_fn, flat: torch.Tensor, index: int, h: float) -> float:
    original = flat[index].item()
    flat[index] = original + h
    plus = float(loss_fn())
    flat[index] = original - h
    minus = float(loss_fn())
    flat[index] = original
    return (plus - minus) / (2 * h)


def finite_difference_check(
    loss_fn: typing.Callable[[], torch.Tensor],
    parameters: typing.Dict[str, torch.nn.Parameter],
    samples_per_tensor: int = 4,
    h: float = 1e-3,
    tolerance: float = 1e-4,
    seed: int = 0,
) -> GradientCheck:
    """Compare autograd against central differences on sampled parameter entries.

    ``loss_fn`` must be a deterministic scalar function of ``parameters``; run it in
    double precision. An entry whose step straddles a kink of a piecewise-linear
    activation is retried with smaller steps before being reported.
    """
    named = {name: p for name, p in parameters.items() if p.requires_grad}
    for p in named.values():
        p.grad = None
    loss_fn().backward()
    analytic = {
        name: p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p) for name, p in named.items()
    }

    rng = np.random.default_rng(seed)
    worst = None
    max_error = 0.0
    checked = 0
    with torch.no_grad():
        for name, p in named.items():
            flat = p.data.view(-1)
            grad = analytic[name].view(-1)
            count = min(samples_per_tensor, flat.numel())
            for index in rng.choice(flat.numel(), size=count, replace=False):
                index = int(index)
                error, numeric = float("inf"), 0.0
                for scale in REFINEMENTS:
                    numeric = _central_difference(loss_fn, flat, index, h * scale)
                    error = relative_error(grad[index].item(), numeric)
                    if error < tolerance:
                        break
                checked += 1
                if error > max_error:
                    max_error = error
                    worst = (name, index, grad[index].item(), numeric)
    if max_error >= tolerance:
        logger.warn("gradcheck.failed", max_error=max_error, worst=worst)
    return GradientCheck(max_error, checked, worst)

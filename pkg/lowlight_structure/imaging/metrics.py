import math
import typing
import structlog

import torch
import torch.nn.functional as F

import lowlight_structure.errors as errors

logger = structlog.get_logger(__name__)

__all__ = (
    'PSNR_CAP', 'BCE_EPS', 'REPORT_VERSION', 'psnr', 'ssim', 'edge_metrics',
    'gaussian_window', 'build_metric_report',
)

PSNR_CAP = 100.0
BCE_EPS = 1e-7
REPORT_VERSION = 1


def _check_pair(operation: str, a: torch.Tensor, b: torch.Tensor):
    if a.shape != b.shape:
        raise errors.ShapeMismatchError(operation, a.shape, b.shape)
    if a.dim() != 4:
        raise errors.UsageError(description=f"{operation} expects (B, C, H, W) tensors")


def psnr(a: torch.Tensor, b: torch.Tensor, max_val: float = 1.0, cap: float = PSNR_CAP) -> torch.Tensor:
    """Per-image PSNR in dB; identical images report ``cap``."""
    _check_pair("psnr", a, b)
    if max_val <= 0:
        raise errors.UsageError(description="psnr max_val must be positive")
    mse = ((a.double() - b.double()) ** 2).mean(dim=(1, 2, 3))
    value = 10.0 * torch.log10((max_val ** 2) / mse.clamp_min(1e-300))
    return torch.where(mse == 0, torch.full_like(mse, cap), value.clamp(max=cap))


def gaussian_window(size: int = 11, sigma: float = 1.5, dtype=torch.float64) -> torch.Tensor:
    coords = torch.arange(size, dtype=dtype) - (size - 1) / 2.0
    g = torch.exp(-(coords ** 2) / (2 * sigma ** 2))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim(
    a: torch.Tensor,
    b: torch.Tensor,
    max_val: float = 1.0,
    window_size: int = 11,
    sigma: float = 1.5,
) -> torch.Tensor:
    """Per-image mean SSIM over valid Gaussian windows, computed on luminance."""
    from lowlight_structure.imaging import to_luminance

    _check_pair("ssim", a, b)
    if min(a.shape[-2:]) < window_size:
        raise errors.UsageError(
            description=f"ssim needs images of at least {window_size}x{window_size}, got {tuple(a.shape[-2:])}"
        )
    x = to_luminance(a.double())
    y = to_luminance(b.double())
    window = gaussian_window(window_size, sigma).to(x.device).view(1, 1, window_size, window_size)
    c1 = (0.01 * max_val) ** 2
    c2 = (0.03 * max_val) ** 2

    mu_x = F.conv2d(x, window)
    mu_y = F.conv2d(y, window)
    mu_xx = mu_x * mu_x
    mu_yy = mu_y * mu_y
    mu_xy = mu_x * mu_y
    sigma_xx = F.conv2d(x * x, window) - mu_xx
    sigma_yy = F.conv2d(y * y, window) - mu_yy
    sigma_xy = F.conv2d(x * y, window) - mu_xy

    numerator = (2 * mu_xy + c1) * (2 * sigma_xy + c2)
    denominator = (mu_xx + mu_yy + c1) * (sigma_xx + sigma_yy + c2)
    return (numerator / denominator).mean(dim=(1, 2, 3))


def edge_metrics(pred: torch.Tensor, gt: torch.Tensor, eps: float = BCE_EPS) -> typing.Dict[str, torch.Tensor]:
    """Per-image binary cross-entropy (nats) and mean squared difference."""
    _check_pair("edge_metrics", pred, gt)
    p = pred.double()
    t = gt.double()
    clamped = p.clamp(eps, 1.0 - eps)
    ce = -(t * torch.log(clamped) + (1.0 - t) * torch.log1p(-clamped))
    return {
        "ce": ce.mean(dim=(1, 2, 3)),
        "l2": ((p - t) ** 2).mean(dim=(1, 2, 3)),
    }


def build_metric_report(ids: typing.Sequence[str], scores: typing.Dict[str, typing.Sequence[float]]) -> dict:
    """Assemble the versioned report: one entry per image plus the mean of every metric."""
    images = []
    for index, sample_id in enumerate(ids):
        entry = {"id": sample_id}
        for metric, values in scores.items():
            entry[metric] = float(values[index])
        images.append(entry)
    mean = {
        metric: math.fsum(float(v) for v in values) / len(values) if len(values) else float("nan")
        for metric, values in scores.items()
    }
    return {"version": REPORT_VERSION, "count": len(images), "images": images, "mean": mean}

"""Tensor primitives shared by every network: directional gradients, instance
normalization, luminance conversion and edge-map resizing.

All functions are pure and operate on (B, C, H, W) torch tensors.
"""
import typing
import structlog

import torch
import torch.nn.functional as F

import lowlight_structure.errors as errors

logger = structlog.get_logger(__name__)

__all__ = (
    'DIRECTIONS', 'compute_gradient_maps', 'instance_norm', 'resize_map',
    'to_luminance', 'ensure_finite', 'ensure_image', 'threshold_edges',
)

# (name, dy, dx); +x is increasing column index, +y increasing row index.
DIRECTIONS: typing.Tuple[typing.Tuple[str, int, int], ...] = (
    ("+x", 0, 1),
    ("-x", 0, -1),
    ("+y", 1, 0),
    ("-y", -1, 0),
    ("+x+y", 1, 1),
    ("+x-y", -1, 1),
    ("-x+y", 1, -1),
    ("-x-y", -1, -1),
)

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def ensure_finite(tensor: torch.Tensor, name: str) -> torch.Tensor:
    if not bool(torch.isfinite(tensor).all()):
        raise errors.CorruptStateError(name)
    return tensor


def ensure_image(tensor: torch.Tensor, name: str = "image", min_size: int = 1) -> torch.Tensor:
    if tensor.dim() != 4:
        raise errors.UsageError(description=f"{name} must be (B, C, H, W), got {tuple(tensor.shape)}")
    if tensor.shape[1] not in (1, 3):
        raise errors.UsageError(description=f"{name} must have 1 or 3 channels, got {tensor.shape[1]}")
    if min(tensor.shape[-2:]) < min_size:
        raise errors.UsageError(description=f"{name} is smaller than {min_size}x{min_size}")
    return tensor


def _shifted_difference(f: torch.Tensor, dy: int, dx: int) -> torch.Tensor:
    H, W = f.shape[-2:]
    target = f[..., max(0, -dy):H - max(0, dy), max(0, -dx):W - max(0, dx)]
    neighbor = f[..., max(0, dy):H + min(0, dy), max(0, dx):W + min(0, dx)]
    # positions whose neighbor falls outside the tensor stay zero
    return F.pad(
        neighbor - target, (max(0, -dx), max(0, dx), max(0, -dy), max(0, dy))
    )


def compute_gradient_maps(f: torch.Tensor) -> typing.List[torch.Tensor]:
    """Forward differences toward each of the eight compass directions, in
    ``DIRECTIONS`` order, each shaped like ``f``."""
    ensure_finite(f, "gradient input")
    return [_shifted_difference(f, dy, dx) for _, dy, dx in DIRECTIONS]


def instance_norm(x: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    if eps <= 0:
        raise errors.UsageError(description="instance_norm eps must be positive")
    mean = x.mean(dim=(-2, -1), keepdim=True)
    var = x.var(dim=(-2, -1), keepdim=True, correction=0)
    return (x - mean) / torch.sqrt(var + eps)


def resize_map(m: torch.Tensor, target_h: int, target_w: int) -> torch.Tensor:
    if target_h < 1 or target_w < 1:
        raise errors.UsageError(description="resize target must be at least 1x1")
    if tuple(m.shape[-2:]) == (target_h, target_w):
        return m
    resized = F.interpolate(m, size=(target_h, target_w), mode="bilinear", align_corners=False)
    return resized.clamp(0.0, 1.0)


def to_luminance(img: torch.Tensor) -> torch.Tensor:
    if img.shape[1] == 1:
        return img
    if img.shape[1] != 3:
        raise errors.UsageError(description=f"cannot take luminance of {img.shape[1]} channels")
    weights = img.new_tensor(LUMA_WEIGHTS).view(1, 3, 1, 1)
    return (img * weights).sum(dim=1, keepdim=True)


def threshold_edges(edge_map: torch.Tensor, threshold: float = 0.5) -> torch.Tensor:
    """Binarize a soft edge map for display."""
    return (edge_map >= threshold).to(edge_map.dtype)


from .canny import canny_edges  # noqa: E402
from .metrics import psnr, ssim, edge_metrics  # noqa: E402

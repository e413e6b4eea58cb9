import typing
import structlog

import numpy as np
import torch
from scipy import ndimage

import lowlight_structure.errors as errors

logger = structlog.get_logger(__name__)

__all__ = ('canny_edges', )

# gradient-angle bin -> (dy, dx) of the neighbor along the gradient
_NMS_OFFSETS = ((0, 1), (1, 1), (1, 0), (1, -1))
_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


def _bin_angles(gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    angle = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    return (((angle + 22.5) // 45.0) % 4).astype(np.int64)


def _non_max_suppression(magnitude: np.ndarray, bins: np.ndarray) -> np.ndarray:
    """Keep pixels that dominate both neighbors along the gradient.

    Ties are broken toward the positive side: a pixel must be >= its negative
    neighbor and strictly > its positive one, so a symmetric ramp yields a single
    one-pixel ridge."""
    H, W = magnitude.shape
    padded = np.pad(magnitude, 1, mode="constant")
    keep = np.zeros_like(magnitude, dtype=bool)
    for index, (dy, dx) in enumerate(_NMS_OFFSETS):
        plus = padded[1 + dy:1 + dy + H, 1 + dx:1 + dx + W]
        minus = padded[1 - dy:1 - dy + H, 1 - dx:1 - dx + W]
        keep |= (bins == index) & (magnitude >= minus) & (magnitude > plus)
    return keep & (magnitude > 0)


def _hysteresis(candidates: np.ndarray, magnitude: np.ndarray, low: float, high: float) -> np.ndarray:
    weak = candidates & (magnitude >= low)
    strong = weak & (magnitude >= high)
    labels, count = ndimage.label(weak, structure=_EIGHT_CONNECTED)
    if count == 0:
        return np.zeros_like(weak)
    connected = np.zeros(count + 1, dtype=bool)
    connected[np.unique(labels[strong])] = True
    connected[0] = False
    return connected[labels]


def _canny_single(luma: np.ndarray, low: float, high: float, sigma: float, relative: bool) -> np.ndarray:
    # subtracting the minimum keeps the detector exactly invariant to brightness offsets
    luma = luma - luma.min()
    smoothed = ndimage.gaussian_filter(luma, sigma=sigma, mode="nearest")
    gx = ndimage.sobel(smoothed, axis=1, mode="nearest")
    gy = ndimage.sobel(smoothed, axis=0, mode="nearest")
    magnitude = np.hypot(gx, gy)
    peak = float(magnitude.max())
    if peak <= 1e-12:
        return np.zeros_like(luma, dtype=bool)
    if relative:
        low, high = low * peak, high * peak
    candidates = _non_max_suppression(magnitude, _bin_angles(gx, gy))
    return _hysteresis(candidates, magnitude, low, high)


def canny_edges(
    img: typing.Union[torch.Tensor, np.ndarray],
    low_thresh: float = 0.1,
    high_thresh: float = 0.2,
    sigma: float = 1.0,
    relative: bool = True,
) -> torch.Tensor:
    """Binary Canny edge map (B, 1, H, W) of an image or batch.

    With ``relative`` the thresholds are fractions of each image's peak gradient
    magnitude. Color input is reduced to luminance first."""
    if low_thresh < 0 or low_thresh >= high_thresh:
        raise errors.ConfigurationError(
            description=f"Canny thresholds need 0 <= low < high, got {low_thresh} and {high_thresh}"
        )
    from lowlight_structure.imaging import to_luminance

    tensor = torch.as_tensor(img)
    if tensor.dim() == 2:
        tensor = tensor[None, None]
    elif tensor.dim() == 3:
        tensor = tensor[None]
    if tensor.dim() != 4:
        raise errors.UsageError(description=f"canny_edges expects an image or batch, got {tuple(tensor.shape)}")
    out_dtype = tensor.dtype if tensor.is_floating_point() else torch.float32

    luma = to_luminance(tensor.detach().to(torch.float64)).cpu().numpy()
    edges = np.stack(
        [_canny_single(luma[b, 0], low_thresh, high_thresh, sigma, relative) for b in range(luma.shape[0])]
    )
    return torch.from_numpy(edges[:, None].astype(np.float64)).to(out_dtype)

"""Structure-guided enhancement.

A U-Net over the concatenated appearance estimate and input whose decoder levels
are refined by kernels and normalization maps synthesized from the edge map:

    d_hat = d (*) K(I_s)                  per-pixel depthwise filtering
    d_bar = IN(d_hat) * alpha(I_s) + gamma(I_s)
    d_next = C(d) + d_bar

The output is a residual over the appearance estimate.
"""
import math
import typing
import structlog

import torch
import torch.nn as nn
import torch.nn.functional as F

import lowlight_structure.errors as errors
from lowlight_structure.config import SgemConfig
from lowlight_structure.imaging import instance_norm, resize_map
from lowlight_structure.nets.appearance import check_divisible
from lowlight_structure.nets.layers import LEAKY_SLOPE, ConvBlock, Down, Up, conv3x3, seeded, zero_

logger = structlog.get_logger(__name__)

__all__ = (
    'GuidanceParams', 'KernelSynthesizer', 'NormSynthesizer', 'sgc_apply', 'sgn_apply',
    'GuidedLevel', 'SgemNet', 'init_sgem',
)


class GuidanceParams(typing.NamedTuple):
    kernels: torch.Tensor  # (B, b * kh * kw, p, q), softmax-normalized per channel and location
    alpha: torch.Tensor    # (B, b, p, q)
    gamma: torch.Tensor    # (B, b, p, q)


class KernelSynthesizer(nn.Module):
    def __init__(self, channels: int, kernel_size: int, hidden: int):
        super().__init__()
        self.channels = channels
        self.taps = kernel_size * kernel_size
        self.conv1 = conv3x3(1, hidden)
        self.conv2 = conv3x3(hidden, channels * self.taps)

    def forward(self, edges: torch.Tensor) -> torch.Tensor:
        logits = self.conv2(F.leaky_relu(self.conv1(edges), LEAKY_SLOPE))
        B, _, p, q = logits.shape
        kernels = logits.view(B, self.channels, self.taps, p, q).softmax(dim=2)
        return kernels.view(B, self.channels * self.taps, p, q)


class NormSynthesizer(nn.Module):
    """Scale and shift maps; both heads start at zero so alpha = 1 and gamma = 0."""

    def __init__(self, channels: int, hidden: int):
        super().__init__()
        self.shared = conv3x3(1, hidden)
        self.alpha_head = zero_(conv3x3(hidden, channels))
        self.gamma_head = zero_(conv3x3(hidden, channels))

    def forward(self, edges: torch.Tensor) -> typing.Tuple[torch.Tensor, torch.Tensor]:
        hidden = F.leaky_relu(self.shared(edges), LEAKY_SLOPE)
        return 1.0 + self.alpha_head(hidden), self.gamma_head(hidden)


def sgc_apply(features: torch.Tensor, kernels: torch.Tensor, kernel_size: int = 3) -> torch.Tensor:
    """Depthwise convolution with a distinct kernel at every location (zero padding)."""
    B, C, H, W = features.shape
    taps = kernel_size * kernel_size
    if kernels.shape != (B, C * taps, H, W):
        raise errors.ShapeMismatchError("structure-guided convolution", (B, C * taps, H, W), kernels.shape)
    patches = F.unfold(features, kernel_size, padding=kernel_size // 2).view(B, C, taps, H, W)
    return (patches * kernels.view(B, C, taps, H, W)).sum(dim=2)


def sgn_apply(features: torch.Tensor, alpha: torch.Tensor, gamma: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    if alpha.shape != features.shape or gamma.shape != features.shape:
        raise errors.ShapeMismatchError("structure-guided normalization", features.shape, alpha.shape)
    return instance_norm(features, eps) * alpha + gamma


def kernel_entropy(kernels: torch.Tensor, taps: int) -> torch.Tensor:
    B, _, p, q = kernels.shape
    probs = kernels.view(B, -1, taps, p, q)
    return -(probs * torch.log(probs.clamp_min(1e-12))).sum(dim=2)


class GuidedLevel(nn.Module):
    def __init__(self, channels: int, config: SgemConfig):
        super().__init__()
        self.kernel_size = config.kernel_size
        self.eps = config.eps
        self.conv = ConvBlock(channels, channels)
        self.kernels = KernelSynthesizer(channels, config.kernel_size, config.guidance_hidden)
        self.norms = NormSynthesizer(channels, config.guidance_hidden)

    def guidance(self, edges: torch.Tensor, size: typing.Tuple[int, int]) -> GuidanceParams:
        resized = resize_map(edges, *size)
        alpha, gamma = self.norms(resized)
        return GuidanceParams(self.kernels(resized), alpha, gamma)

    def forward(self, d: torch.Tensor, edges: typing.Optional[torch.Tensor]) -> torch.Tensor:
        if edges is None:
            return self.conv(d)
        params = self.guidance(edges, tuple(d.shape[-2:]))
        refined = sgn_apply(sgc_apply(d, params.kernels, self.kernel_size), params.alpha, params.gamma, self.eps)
        return self.conv(d) + refined


class SgemNet(nn.Module):
    def __init__(self, config: SgemConfig, image_channels: int = 3, guided: bool = True):
        super().__init__()
        self.levels = config.levels
        self.guided = guided
        channels = list(config.channels)
        self.encoders = nn.ModuleList([ConvBlock(2 * image_channels, channels[0])])
        for level in range(1, self.levels):
            self.encoders.append(
                nn.Sequential(Down(channels[level - 1], channels[level]), ConvBlock(channels[level], channels[level]))
            )
        # decoder level 0 is the bottleneck; the rest upsample and merge a skip first
        self.ups = nn.ModuleList()
        self.merges = nn.ModuleList()
        decoder_channels = [channels[-1]]
        for level in reversed(range(self.levels - 1)):
            self.ups.append(Up(channels[level + 1], channels[level]))
            self.merges.append(conv3x3(2 * channels[level], channels[level]))
            decoder_channels.append(channels[level])
        self.decoders = nn.ModuleList([GuidedLevel(c, config) for c in decoder_channels])
        self.head = zero_(conv3x3(channels[0], image_channels))

    def _decode(self, appearance: torch.Tensor, image: torch.Tensor, edges: typing.Optional[torch.Tensor]):
        if appearance.shape != image.shape:
            raise errors.ShapeMismatchError("enhancement module", appearance.shape, image.shape)
        check_divisible(image, self.levels, "enhancement module")
        if edges is not None and (edges.shape[1] != 1 or edges.shape[-2:] != image.shape[-2:]):
            raise errors.ShapeMismatchError("enhancement module edges", image.shape[-2:], edges.shape)
        skips = []
        x = torch.cat([appearance, image], dim=1)
        for encoder in self.encoders:
            x = encoder(x)
            skips.append(x)
        levels = [x]
        x = self.decoders[0](x, edges)
        for up, merge, decoder, skip in zip(self.ups, self.merges, self.decoders[1:], reversed(skips[:-1])):
            d = F.leaky_relu(merge(torch.cat([up(x, size=skip.shape[-2:]), skip], dim=1)), LEAKY_SLOPE)
            levels.append(d)
            x = decoder(d, edges)
        return x, levels

    def forward(
        self, appearance: torch.Tensor, image: torch.Tensor, edges: typing.Optional[torch.Tensor]
    ) -> torch.Tensor:
        """Enhanced image clamp(appearance + residual); ``edges`` is ignored when unguided."""
        x, _ = self._decode(appearance, image, edges if self.guided else None)
        return (appearance + self.head(x)).clamp(0.0, 1.0)

    @torch.no_grad()
    def guidance_statistics(self, appearance: torch.Tensor, image: torch.Tensor, edges: torch.Tensor) -> dict:
        """Per decoder level: alpha/gamma mean and std, mean kernel entropy (nats)."""
        _, levels = self._decode(appearance, image, edges if self.guided else None)
        stats = {}
        for index, (decoder, d) in enumerate(zip(self.decoders, levels)):
            params = decoder.guidance(edges, tuple(d.shape[-2:]))
            entropy = kernel_entropy(params.kernels, decoder.kernel_size ** 2)
            stats[f"level_{index}"] = {
                "height": int(d.shape[-2]),
                "width": int(d.shape[-1]),
                "alpha_mean": float(params.alpha.mean()),
                "alpha_std": float(params.alpha.std(correction=0)),
                "gamma_mean": float(params.gamma.mean()),
                "gamma_std": float(params.gamma.std(correction=0)),
                "kernel_entropy_mean": float(entropy.mean()),
                "kernel_entropy_max": math.log(decoder.kernel_size ** 2),
            }
        return stats


def init_sgem(config: SgemConfig, seed: int, image_channels: int = 3, guided: bool = True) -> SgemNet:
    with seeded(seed):
        return SgemNet(config, image_channels, guided)

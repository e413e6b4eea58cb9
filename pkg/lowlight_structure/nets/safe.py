"""Structure-aware feature extraction.

Every level runs nine parallel branches (the feature itself plus its eight
directional gradient maps). Each branch pairs a windowed-attention encoder for
long-range context with a convolutional encoder for local detail, fuses the two
with a per-position MLP, and the nine fused features are merged and downsampled
into the next level.
"""
import typing
import structlog

import torch
import torch.nn as nn
import torch.nn.functional as F

import lowlight_structure.errors as errors
from lowlight_structure.config import SafeConfig
from lowlight_structure.imaging import DIRECTIONS, compute_gradient_maps
from lowlight_structure.nets.layers import LEAKY_SLOPE, ConvBlock, Down, conv1x1, conv3x3

logger = structlog.get_logger(__name__)

__all__ = (
    'FeaturePyramid', 'GradientHook', 'window_partition', 'window_reverse', 'WindowAttention',
    'LocallyEnhancedFeedForward', 'LongRangeEncoder', 'ShortRangeEncoder', 'LongShortFusion',
    'GradientFusion', 'SafeLevel', 'SafeEncoder', 'PlainEncoder', 'pyramid_channels',
)

FeaturePyramid = typing.List[torch.Tensor]
GradientHook = typing.Callable[[int, typing.List[torch.Tensor]], typing.List[torch.Tensor]]
NUM_BRANCHES = 1 + len(DIRECTIONS)


def window_partition(x: torch.Tensor, window_h: int, window_w: int) -> torch.Tensor:
    """(B, H, W, C) -> (B * windows, window_h * window_w, C)"""
    B, H, W, C = x.shape
    x = x.view(B, H // window_h, window_h, W // window_w, window_w, C)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(-1, window_h * window_w, C)


def window_reverse(windows: torch.Tensor, window_h: int, window_w: int, H: int, W: int) -> torch.Tensor:
    C = windows.shape[-1]
    B = windows.shape[0] // ((H // window_h) * (W // window_w))
    x = windows.view(B, H // window_h, W // window_w, window_h, window_w, C)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(B, H, W, C)


class WindowAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise errors.ConfigurationError(description=f"{heads} heads do not divide {dim} channels")
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def _qkv(self, tokens: torch.Tensor):
        Bw, N, C = tokens.shape
        qkv = self.qkv(tokens).reshape(Bw, N, 3, self.heads, C // self.heads).permute(2, 0, 3, 1, 4)
        return qkv[0], qkv[1], qkv[2]

    def attention_probs(self, tokens: torch.Tensor) -> torch.Tensor:
        """Row-stochastic attention weights, (windows, heads, N, N)."""
        q, k, _ = self._qkv(tokens)
        return ((q @ k.transpose(-2, -1)) * self.scale).softmax(dim=-1)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        Bw, N, C = tokens.shape
        q, k, v = self._qkv(tokens)
        attn = ((q @ k.transpose(-2, -1)) * self.scale).softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(Bw, N, C)
        return self.proj(out)


class LocallyEnhancedFeedForward(nn.Module):
    """Token MLP with a depthwise 3x3 convolution between its two projections."""

    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.dwconv = nn.Conv2d(hidden, hidden, 3, padding=1, groups=hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (B, H, W, C)
        y = F.gelu(self.fc1(x))
        y = F.gelu(self.dwconv(y.permute(0, 3, 1, 2))).permute(0, 2, 3, 1)
        return self.fc2(y)


class LongRangeEncoder(nn.Module):
    def __init__(self, dim: int, heads: int, window_size: int, mlp_ratio: float):
        super().__init__()
        self.window_size = window_size
        self.norm1 = nn.LayerNorm(dim)
        self.attention = WindowAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = LocallyEnhancedFeedForward(dim, max(1, int(dim * mlp_ratio)))

    def window_shape(self, height: int, width: int) -> typing.Tuple[int, int]:
        # windows larger than the map shrink to the map
        window_h, window_w = min(self.window_size, height), min(self.window_size, width)
        if height % window_h or width % window_w:
            raise errors.UsageError(
                description=f"window {self.window_size} does not tile a {height}x{width} map; pad the input"
            )
        return window_h, window_w

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        B, C, H, W = x.shape
        window_h, window_w = self.window_shape(H, W)
        tokens = x.permute(0, 2, 3, 1)
        windows = window_partition(self.norm1(tokens), window_h, window_w)
        tokens = tokens + window_reverse(self.attention(windows), window_h, window_w, H, W)
        tokens = tokens + self.ffn(self.norm2(tokens))
        return tokens.permute(0, 3, 1, 2).contiguous()


class ShortRangeEncoder(nn.Module):
    """Residual stack of 3x3 convolutions; its receptive field radius equals ``layers``."""

    def __init__(self, dim: int, layers: int = 2):
        super().__init__()
        self.convs = nn.ModuleList([conv3x3(dim, dim) for _ in range(layers)])

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = x
        for index, conv in enumerate(self.convs):
            y = conv(y)
            if index < len(self.convs) - 1:
                y = F.leaky_relu(y, LEAKY_SLOPE)
        return x + y


class LongShortFusion(nn.Module):
    """Per-position MLP over the concatenated long- and short-range features,
    with a linear shortcut from the concatenation."""

    def __init__(self, dim: int, hidden: typing.Optional[int] = None):
        super().__init__()
        hidden = hidden or 2 * dim
        self.shortcut = conv1x1(2 * dim, dim, bias=False)
        self.fc1 = conv1x1(2 * dim, hidden)
        self.fc2 = conv1x1(hidden, dim)

    def forward(self, long_range: torch.Tensor, short_range: torch.Tensor) -> torch.Tensor:
        if long_range.shape != short_range.shape:
            raise errors.ShapeMismatchError("long/short fusion", long_range.shape, short_range.shape)
        joined = torch.cat([long_range, short_range], dim=1)
        return self.shortcut(joined) + self.fc2(F.gelu(self.fc1(joined)))


class GradientFusion(nn.Module):
    """Merge the content feature with its eight directional features, then
    halve the resolution."""

    def __init__(self, dim: int, out_dim: int):
        super().__init__()
        self.merge = conv1x1(NUM_BRANCHES * dim, dim)
        self.down = conv3x3(dim, out_dim, stride=2)

    def forward(self, content: torch.Tensor, directional: typing.Sequence[torch.Tensor]) -> torch.Tensor:
        if len(directional) != len(DIRECTIONS):
            raise errors.UsageError(
                description=f"gradient fusion takes {len(DIRECTIONS)} directional features, got {len(directional)}"
            )
        for feature in directional:
            if feature.shape != content.shape:
                raise errors.ShapeMismatchError("gradient fusion", content.shape, feature.shape)
        merged = F.leaky_relu(self.merge(torch.cat([content, *directional], dim=1)), LEAKY_SLOPE)
        return self.down(merged)


class SafeBranch(nn.Module):
    def __init__(self, dim: int, config: SafeConfig):
        super().__init__()
        self.lre = LongRangeEncoder(dim, config.heads, config.window_size, config.mlp_ratio)
        self.sre = ShortRangeEncoder(dim, config.sre_layers)
        self.fuse = LongShortFusion(dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fuse(self.lre(x), self.sre(x))


class SafeLevel(nn.Module):
    """Branch 0 sees the feature; branches 1..8 see its gradient maps in ``DIRECTIONS`` order."""

    def __init__(self, dim: int, out_dim: int, config: SafeConfig):
        super().__init__()
        self.branches = nn.ModuleList([SafeBranch(dim, config) for _ in range(NUM_BRANCHES)])
        self.fusion = GradientFusion(dim, out_dim)

    def forward(self, f: torch.Tensor, gradients: typing.Optional[typing.List[torch.Tensor]] = None) -> torch.Tensor:
        if gradients is None:
            gradients = compute_gradient_maps(f)
        content = self.branches[0](f)
        directional = [branch(g) for branch, g in zip(self.branches[1:], gradients)]
        return self.fusion(content, directional)


def pyramid_channels(config: SafeConfig) -> typing.List[int]:
    """Channels of f_1 .. f_{N+1}; the last level keeps the deepest width."""
    return list(config.channels) + [config.channels[-1]]


class SafeEncoder(nn.Module):
    def __init__(self, config: SafeConfig, in_channels: int = 3):
        super().__init__()
        channels = pyramid_channels(config)
        self.num_levels = config.num_levels
        self.stem = conv3x3(in_channels, channels[0])
        self.levels = nn.ModuleList(
            [SafeLevel(channels[i], channels[i + 1], config) for i in range(config.num_levels)]
        )

    def forward(self, image: torch.Tensor, gradient_hook: typing.Optional[GradientHook] = None) -> FeaturePyramid:
        """Returns [f_1 (stem, full resolution), f_2, ..., f_{N+1}].

        ``gradient_hook(level, maps)`` may replace a level's gradient maps; it exists
        for probing branch isolation."""
        factor = 2 ** self.num_levels
        if image.shape[-2] % factor or image.shape[-1] % factor:
            raise errors.UsageError(
                description=f"structure encoder needs sides divisible by {factor}, got {tuple(image.shape[-2:])}"
            )
        f = self.stem(image)
        pyramid = [f]
        for index, level in enumerate(self.levels):
            gradients = compute_gradient_maps(f)
            if gradient_hook is not None:
                gradients = gradient_hook(index, gradients)
            f = level(f, gradients)
            pyramid.append(f)
        return pyramid


class PlainEncoder(nn.Module):
    """Convolutional stand-in for the structure-aware encoder (same pyramid shapes)."""

    def __init__(self, config: SafeConfig, in_channels: int = 3):
        super().__init__()
        channels = pyramid_channels(config)
        self.num_levels = config.num_levels
        self.stem = conv3x3(in_channels, channels[0])
        self.levels = nn.ModuleList(
            [
                nn.Sequential(ConvBlock(channels[i], channels[i]), Down(channels[i], channels[i + 1]))
                for i in range(config.num_levels)
            ]
        )

    def forward(self, image: torch.Tensor, gradient_hook: typing.Optional[GradientHook] = None) -> FeaturePyramid:
        f = self.stem(image)
        pyramid = [f]
        for level in self.levels:
            f = level(f)
            pyramid.append(f)
        return pyramid

import contextlib
import typing

import torch
import torch.nn as nn
import torch.nn.functional as F

__all__ = ('LEAKY_SLOPE', 'seeded', 'conv3x3', 'conv1x1', 'ConvBlock', 'Down', 'Up', 'zero_', 'count_parameters')

LEAKY_SLOPE = 0.2


@contextlib.contextmanager
def seeded(seed: int):
    """Run module construction under a fixed torch seed without touching the caller's RNG."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        yield


def conv3x3(in_channels: int, out_channels: int, stride: int = 1, bias: bool = True) -> nn.Conv2d:
    return nn.Conv2d(in_channels, out_channels, 3, stride=stride, padding=1, bias=bias)


def conv1x1(in_channels: int, out_channels: int, bias: bool = True) -> nn.Conv2d:
    return nn.Conv2d(in_channels, out_channels, 1, bias=bias)


def zero_(module: nn.Module) -> nn.Module:
    for parameter in module.parameters():
        nn.init.zeros_(parameter)
    return module


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


class ConvBlock(nn.Module):
    """Two 3x3 convolutions, each followed by a leaky rectifier."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.conv1 = conv3x3(in_channels, out_channels)
        self.conv2 = conv3x3(out_channels, out_channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = F.leaky_relu(self.conv1(x), LEAKY_SLOPE)
        return F.leaky_relu(self.conv2(x), LEAKY_SLOPE)


class Down(nn.Module):
    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.conv = conv3x3(in_channels, out_channels, stride=2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.leaky_relu(self.conv(x), LEAKY_SLOPE)


class Up(nn.Module):
    """Nearest-neighbor x2 followed by a 3x3 convolution."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.conv = conv3x3(in_channels, out_channels)

    def forward(self, x: torch.Tensor, size: typing.Optional[typing.Tuple[int, int]] = None) -> torch.Tensor:
        x = F.interpolate(x, size=size, scale_factor=None if size else 2, mode="nearest")
        return F.leaky_relu(self.conv(x), LEAKY_SLOPE)

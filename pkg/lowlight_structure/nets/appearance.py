import typing
import structlog

import torch
import torch.nn as nn

import lowlight_structure.errors as errors
from lowlight_structure.config import UNetConfig
from lowlight_structure.nets.layers import ConvBlock, Down, Up, conv3x3, seeded

logger = structlog.get_logger(__name__)

__all__ = ('AppearanceUNet', 'init_appearance', 'unet_channels')


def unet_channels(config: UNetConfig) -> typing.List[int]:
    return [config.base_channels * multiplier for multiplier in config.channel_multipliers]


def check_divisible(x: torch.Tensor, levels: int, name: str):
    factor = 2 ** (levels - 1)
    height, width = x.shape[-2:]
    if height % factor or width % factor:
        raise errors.UsageError(
            description=f"{name} needs height and width divisible by {factor}, got {height}x{width}"
        )


class AppearanceUNet(nn.Module):
    """Encoder-decoder with same-resolution skips; predicts the restored image
    directly through a final sigmoid."""

    def __init__(self, config: UNetConfig):
        super().__init__()
        self.depth = config.depth
        channels = unet_channels(config)
        self.encoders = nn.ModuleList([ConvBlock(config.in_channels, channels[0])])
        for level in range(1, self.depth):
            self.encoders.append(
                nn.Sequential(Down(channels[level - 1], channels[level]), ConvBlock(channels[level], channels[level]))
            )
        self.ups = nn.ModuleList()
        self.decoders = nn.ModuleList()
        for level in reversed(range(self.depth - 1)):
            self.ups.append(Up(channels[level + 1], channels[level]))
            self.decoders.append(ConvBlock(2 * channels[level], channels[level]))
        self.head = conv3x3(channels[0], config.out_channels)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        check_divisible(image, self.depth, "appearance network")
        skips = []
        x = image
        for encoder in self.encoders:
            x = encoder(x)
            skips.append(x)
        for up, decoder, skip in zip(self.ups, self.decoders, reversed(skips[:-1])):
            x = decoder(torch.cat([up(x, size=skip.shape[-2:]), skip], dim=1))
        return torch.sigmoid(self.head(x))


def init_appearance(config: UNetConfig, seed: int) -> AppearanceUNet:
    with seeded(seed):
        return AppearanceUNet(config)

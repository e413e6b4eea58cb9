"""Style-based structure generator, the structure model built on it, and the
edge-map discriminator."""
import typing
import structlog

import torch
import torch.nn as nn
import torch.nn.functional as F

import lowlight_structure.errors as errors
from lowlight_structure.config import (
    AblationFlags, DiscriminatorConfig, GeneratorConfig, ModelConfig, SafeConfig, UNetConfig, build_config,
)
from lowlight_structure.nets.appearance import AppearanceUNet
from lowlight_structure.nets.layers import LEAKY_SLOPE, conv1x1, conv3x3, seeded
from lowlight_structure.nets.safe import FeaturePyramid, GradientHook, PlainEncoder, SafeEncoder, pyramid_channels

logger = structlog.get_logger(__name__)

__all__ = (
    'LatentCodes', 'MappingNetwork', 'LatentMapping', 'ModulatedConv2d', 'StructureGenerator',
    'StructureNet', 'BaselineEdgeNet', 'Discriminator', 'build_structure_net', 'init_discriminator',
)


class LatentCodes(typing.NamedTuple):
    z: torch.Tensor
    w: torch.Tensor


class MappingNetwork(nn.Sequential):
    def __init__(self, in_dim: int, out_dim: int, layers: int):
        modules = []
        for index in range(layers):
            modules.append(nn.Linear(in_dim if index == 0 else out_dim, out_dim))
            modules.append(nn.LeakyReLU(LEAKY_SLOPE))
        super().__init__(*modules)


class LatentMapping(nn.Module):
    """Global average pooling of the deepest feature, then z- and w-space MLPs."""

    def __init__(self, in_channels: int, config: GeneratorConfig):
        super().__init__()
        self.to_z = MappingNetwork(in_channels, config.dim_z, config.mapping_layers)
        self.to_w = MappingNetwork(config.dim_z, config.dim_w, config.mapping_layers)

    @staticmethod
    def pool(feature: torch.Tensor) -> torch.Tensor:
        return feature.mean(dim=(-2, -1))

    def forward(self, deepest: torch.Tensor) -> LatentCodes:
        z = self.to_z(self.pool(deepest))
        return LatentCodes(z=z, w=self.to_w(z))


class ModulatedConv2d(nn.Module):
    """Convolution whose input channels are scaled per sample by an affine map of w."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, style_dim: int, demodulate: bool = True):
        super().__init__()
        self.padding = kernel_size // 2
        self.demodulate = demodulate
        self.weight = nn.Parameter(torch.randn(out_channels, in_channels, kernel_size, kernel_size))
        self.weight_scale = (in_channels * kernel_size * kernel_size) ** -0.5
        self.affine = nn.Linear(style_dim, in_channels)
        nn.init.zeros_(self.affine.bias)

    def forward(self, x: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
        N, in_channels, H, W = x.shape
        out_channels, _, kh, kw = self.weight.shape
        styles = self.affine(w) + 1.0
        weight = self.weight_scale * self.weight.unsqueeze(0) * styles.view(N, 1, in_channels, 1, 1)
        if self.demodulate:
            weight = weight * torch.rsqrt((weight ** 2).sum(dim=(2, 3, 4), keepdim=True) + 1e-8)
        out = F.conv2d(
            x.reshape(1, N * in_channels, H, W),
            weight.reshape(N * out_channels, in_channels, kh, kw),
            padding=self.padding,
            groups=N,
        )
        return out.view(N, out_channels, H, W)


class GeneratorBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, feature_channels: int, style_dim: int, upsample: bool):
        super().__init__()
        self.upsample = upsample
        self.conv = ModulatedConv2d(in_channels, out_channels, 3, style_dim)
        # structural feature injected in place of per-pixel noise
        self.inject = conv1x1(feature_channels, out_channels, bias=False)
        self.bias = nn.Parameter(torch.zeros(1, out_channels, 1, 1))

    def forward(self, x: torch.Tensor, w: torch.Tensor, feature: torch.Tensor) -> torch.Tensor:
        if self.upsample:
            x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        if x.shape[-2:] != feature.shape[-2:]:
            raise errors.ShapeMismatchError("generator injection", x.shape[-2:], feature.shape[-2:])
        x = self.conv(x, w) + self.inject(feature) + self.bias
        return F.leaky_relu(x, LEAKY_SLOPE)


class StructureGenerator(nn.Module):
    """Learned constant at the coarsest pyramid resolution, one modulated block per
    pyramid level (coarse to fine), and a 1-channel sigmoid head."""

    def __init__(self, config: GeneratorConfig, feature_channels: typing.Sequence[int]):
        super().__init__()
        channels = list(config.channels)
        if len(channels) != len(feature_channels):
            raise errors.ConfigurationError(
                description=f"generator needs {len(feature_channels)} block widths, got {len(channels)}"
            )
        self.const = nn.Parameter(torch.randn(1, channels[0], config.const_size, config.const_size))
        coarse_to_fine = list(reversed(feature_channels))
        self.blocks = nn.ModuleList(
            [
                GeneratorBlock(
                    channels[max(0, index - 1)],
                    channels[index],
                    coarse_to_fine[index],
                    config.dim_w,
                    upsample=index > 0,
                )
                for index in range(len(channels))
            ]
        )
        self.to_edges = ModulatedConv2d(channels[-1], 1, 1, config.dim_w, demodulate=False)
        self.edge_bias = nn.Parameter(torch.zeros(1, 1, 1, 1))

    def forward(self, codes: LatentCodes, pyramid: FeaturePyramid) -> torch.Tensor:
        if len(pyramid) != len(self.blocks):
            raise errors.UsageError(
                description=f"generator expects {len(self.blocks)} pyramid levels, got {len(pyramid)}"
            )
        features = list(reversed(pyramid))
        w = codes.w
        x = F.interpolate(
            self.const.expand(w.shape[0], -1, -1, -1),
            size=tuple(features[0].shape[-2:]),
            mode="bilinear",
            align_corners=False,
        )
        for block, feature in zip(self.blocks, features):
            x = block(x, w, feature)
        return torch.sigmoid(self.to_edges(x, w) + self.edge_bias)


class StructureNet(nn.Module):
    """Low-light image -> soft edge map: encoder pyramid, latent mapping, generator."""

    def __init__(self, safe: SafeConfig, generator: GeneratorConfig, in_channels: int = 3, plain_encoder: bool = False):
        super().__init__()
        encoder_class = PlainEncoder if plain_encoder else SafeEncoder
        channels = pyramid_channels(safe)
        self.encoder = encoder_class(safe, in_channels)
        self.mapping = LatentMapping(channels[-1], generator)
        self.generator = StructureGenerator(generator, channels)

    def extract(self, image: torch.Tensor, gradient_hook: typing.Optional[GradientHook] = None) -> FeaturePyramid:
        return self.encoder(image, gradient_hook)

    def map_to_w(self, deepest: torch.Tensor) -> LatentCodes:
        return self.mapping(deepest)

    def generate(self, codes: LatentCodes, pyramid: FeaturePyramid) -> torch.Tensor:
        return self.generator(codes, pyramid)

    def intermediates(self, image: torch.Tensor, gradient_hook: typing.Optional[GradientHook] = None) -> dict:
        pyramid = self.extract(image, gradient_hook)
        codes = self.map_to_w(pyramid[-1])
        return {"pyramid": pyramid, "codes": codes, "edges": self.generate(codes, pyramid)}

    def forward(self, image: torch.Tensor, gradient_hook: typing.Optional[GradientHook] = None) -> torch.Tensor:
        return self.intermediates(image, gradient_hook)["edges"]


class BaselineEdgeNet(nn.Module):
    """Encoder-decoder edge predictor used in place of the generative structure model."""

    def __init__(self, config: UNetConfig):
        super().__init__()
        self.unet = AppearanceUNet(config)

    def intermediates(self, image: torch.Tensor, gradient_hook: typing.Optional[GradientHook] = None) -> dict:
        return {"pyramid": [], "codes": None, "edges": self.unet(image)}

    def forward(self, image: torch.Tensor, gradient_hook: typing.Optional[GradientHook] = None) -> torch.Tensor:
        return self.unet(image)


class Discriminator(nn.Module):
    """Strided convolutions, global average pooling and a linear logit per edge map."""

    def __init__(self, config: DiscriminatorConfig):
        super().__init__()
        channels = [1] + list(config.channels)
        self.convs = nn.ModuleList([conv3x3(channels[i], channels[i + 1], stride=2) for i in range(len(channels) - 1)])
        self.logit = nn.Linear(channels[-1], 1)

    def forward(self, edges: torch.Tensor) -> torch.Tensor:
        x = edges
        for conv in self.convs:
            x = F.leaky_relu(conv(x), LEAKY_SLOPE)
        return self.logit(x.mean(dim=(-2, -1))).squeeze(-1)


def build_structure_net(config: ModelConfig, flags: AblationFlags, seed: int) -> typing.Optional[nn.Module]:
    if flags.disable_structure:
        return None
    with seeded(seed):
        if flags.baseline_edge_net:
            unet = config.appearance.dump()
            unet.update(in_channels=config.image_channels, out_channels=1)
            return BaselineEdgeNet(build_config(UNetConfig, unet))
        return StructureNet(config.safe, config.generator, config.image_channels, plain_encoder=flags.disable_safe)


def init_discriminator(config: DiscriminatorConfig, seed: int) -> Discriminator:
    with seeded(seed):
        return Discriminator(config)

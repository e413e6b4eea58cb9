"""Training objectives.

Reconstruction terms compare pixels and frozen perceptual features, the structure
term is a clamped binary cross-entropy against cached Canny edges, and the
adversarial pair is the non-saturating softplus formulation.
"""
import math
import typing
import structlog

import torch
import torch.nn as nn
import torch.nn.functional as F

import lowlight_structure.errors as errors
from lowlight_structure.config import LossWeights, PerceptualConfig
from lowlight_structure.imaging.metrics import BCE_EPS
from lowlight_structure.nets.layers import LEAKY_SLOPE, conv3x3, seeded

logger = structlog.get_logger(__name__)

try:
    import torchvision
except ImportError:
    torchvision = None

__all__ = (
    'PerceptualExtractor', 'RandomFeatureStack', 'VggFeatures', 'build_perceptual_extractor',
    'pixel_loss', 'perceptual_loss', 'reconstruction_loss', 'structure_bce',
    'gan_generator_loss', 'gan_discriminator_loss', 'LossTerms', 'total_loss',
)

TERMS = ("appearance", "structure", "adversarial", "enhancement")


class PerceptualExtractor(nn.Module):
    """Frozen feature stack; ``forward`` returns one feature map per tap."""

    def freeze(self) -> "PerceptualExtractor":
        self.eval()
        for parameter in self.parameters():
            parameter.requires_grad_(False)
        return self

    def train(self, mode: bool = True) -> "PerceptualExtractor":
        # stays in eval mode whatever the surrounding model does
        return super().train(False)


class RandomFeatureStack(PerceptualExtractor):
    def __init__(self, in_channels: int, channels: typing.Sequence[int]):
        super().__init__()
        widths = [in_channels] + list(channels)
        self.stages = nn.ModuleList(
            [
                nn.Sequential(conv3x3(widths[i], widths[i + 1], stride=1 if i == 0 else 2), nn.LeakyReLU(LEAKY_SLOPE))
                for i in range(len(channels))
            ]
        )

    def forward(self, image: torch.Tensor) -> typing.List[torch.Tensor]:
        taps = []
        x = image
        for stage in self.stages:
            x = stage(x)
            taps.append(x)
        return taps


class VggFeatures(PerceptualExtractor):
    """ImageNet VGG-16 features tapped after relu1_2, relu2_2, relu3_3 and relu4_3."""

    TAPS = (3, 8, 15, 22)
    MEAN = (0.485, 0.456, 0.406)
    STD = (0.229, 0.224, 0.225)

    def __init__(self):
        super().__init__()
        if torchvision is None:
            raise errors.ConfigurationError(description="perceptual.kind vgg16 needs torchvision installed")
        weights = torchvision.models.VGG16_Weights.IMAGENET1K_V1
        self.features = torchvision.models.vgg16(weights=weights).features[: self.TAPS[-1] + 1]
        self.register_buffer("mean", torch.tensor(self.MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(self.STD).view(1, 3, 1, 1))

    def forward(self, image: torch.Tensor) -> typing.List[torch.Tensor]:
        if image.shape[1] == 1:
            image = image.expand(-1, 3, -1, -1)
        x = (image - self.mean.to(image.dtype)) / self.std.to(image.dtype)
        taps = []
        for index, layer in enumerate(self.features):
            x = layer(x)
            if index in self.TAPS:
                taps.append(x)
        return taps


def build_perceptual_extractor(config: PerceptualConfig, image_channels: int = 3) -> PerceptualExtractor:
    if config.kind == "vgg16":
        extractor = VggFeatures()
    else:
        with seeded(config.seed):
            extractor = RandomFeatureStack(image_channels, config.channels)
    return extractor.freeze()


def _check_pair(operation: str, pred: torch.Tensor, target: torch.Tensor):
    if pred.shape != target.shape:
        raise errors.ShapeMismatchError(operation, pred.shape, target.shape)


def pixel_loss(pred: torch.Tensor, target: torch.Tensor, norm: str = "l1") -> torch.Tensor:
    _check_pair("pixel loss", pred, target)
    if norm == "l2":
        return F.mse_loss(pred, target)
    return F.l1_loss(pred, target)


def perceptual_loss(
    pred: torch.Tensor, target: torch.Tensor, extractor: PerceptualExtractor, norm: str = "l1"
) -> torch.Tensor:
    """Sum over taps of the mean feature distance; target features carry no gradient."""
    _check_pair("perceptual loss", pred, target)
    with torch.no_grad():
        target_features = extractor(target)
    distance = F.mse_loss if norm == "l2" else F.l1_loss
    return sum(distance(p, t) for p, t in zip(extractor(pred), target_features))


def reconstruction_loss(
    pred: torch.Tensor,
    target: torch.Tensor,
    extractor: typing.Optional[PerceptualExtractor] = None,
    norm: str = "l1",
) -> torch.Tensor:
    loss = pixel_loss(pred, target, norm)
    if extractor is not None:
        loss = loss + perceptual_loss(pred, target, extractor, norm)
    return loss


def structure_bce(pred: torch.Tensor, target: torch.Tensor, eps: float = BCE_EPS) -> torch.Tensor:
    _check_pair("structure loss", pred, target)
    p = pred.clamp(eps, 1.0 - eps)
    return -(target * torch.log(p) + (1.0 - target) * torch.log1p(-p)).mean()


def gan_generator_loss(fake_logits: torch.Tensor) -> torch.Tensor:
    return F.softplus(-fake_logits).mean()


def gan_discriminator_loss(real_logits: torch.Tensor, fake_logits: torch.Tensor) -> torch.Tensor:
    return F.softplus(-real_logits).mean() + F.softplus(fake_logits).mean()


class LossTerms(typing.NamedTuple):
    appearance: torch.Tensor
    structure: torch.Tensor
    adversarial: torch.Tensor
    enhancement: torch.Tensor


def total_loss(terms: LossTerms, weights: LossWeights, step: int = 0) -> torch.Tensor:
    """Weighted sum of the four generator-side terms."""
    diagnostics = {name: float(value.detach()) for name, value in zip(TERMS, terms)}
    for name, value in diagnostics.items():
        if not math.isfinite(value):
            logger.error("loss.nan", term=name, step=step, losses=diagnostics)
            raise errors.TrainingDivergenceError(name, step, diagnostics)
    total = 0.0
    for weight, value in zip(weights.as_tuple(), terms):
        total = total + weight * value
    return total

"""Networks and their composition into the full enhancement framework."""
import typing
import structlog

import torch
import torch.nn as nn

from lowlight_structure.config import AblationFlags, ModelConfig, UNetConfig, build_config
from lowlight_structure.imaging import ensure_finite, ensure_image
from lowlight_structure.nets.appearance import AppearanceUNet, init_appearance
from lowlight_structure.nets.generator import Discriminator, build_structure_net, init_discriminator
from lowlight_structure.nets.layers import count_parameters
from lowlight_structure.nets.sgem import SgemNet, init_sgem

logger = structlog.get_logger(__name__)

__all__ = (
    'FrameworkOutputs', 'LowLightFramework', 'build_framework', 'build_discriminator', 'count_parameters',
)

# per-component seed offsets; construction of one model never shifts another's init
SEED_OFFSETS = {"appearance": 0, "structure": 1, "sgem": 2, "discriminator": 3}


class FrameworkOutputs(typing.NamedTuple):
    appearance: torch.Tensor
    edges: typing.Optional[torch.Tensor]
    enhanced: torch.Tensor


class LowLightFramework(nn.Module):
    """I -> (I_a, I_s, enhanced). A missing appearance model makes the input itself
    the appearance estimate; a missing structure model leaves the enhancer unguided."""

    def __init__(
        self,
        appearance: typing.Optional[AppearanceUNet],
        structure: typing.Optional[nn.Module],
        sgem: SgemNet,
        detach_structure: bool = False,
    ):
        super().__init__()
        self.appearance = appearance
        self.structure = structure
        self.sgem = sgem
        self.detach_structure = detach_structure

    def estimate_appearance(self, image: torch.Tensor) -> torch.Tensor:
        if self.appearance is None:
            return image
        return self.appearance(image)

    def forward(self, image: torch.Tensor) -> FrameworkOutputs:
        ensure_image(image, "input")
        ensure_finite(image, "input")
        appearance = self.estimate_appearance(image)
        edges = self.structure(image) if self.structure is not None else None
        guidance = edges.detach() if edges is not None and self.detach_structure else edges
        enhanced = self.sgem(appearance, image, guidance)
        return FrameworkOutputs(appearance, edges, enhanced)

    def parameter_groups(self) -> typing.Dict[str, typing.List[nn.Parameter]]:
        groups = {"sgem": list(self.sgem.parameters())}
        if self.appearance is not None:
            groups["appearance"] = list(self.appearance.parameters())
        if self.structure is not None:
            groups["structure"] = list(self.structure.parameters())
        return groups


def build_framework(config: ModelConfig, flags: AblationFlags, seed: int) -> LowLightFramework:
    flags = flags.resolved()
    appearance = None
    if not flags.disable_appearance:
        unet = config.appearance.dump()
        unet.update(in_channels=config.image_channels, out_channels=config.image_channels)
        appearance = init_appearance(build_config(UNetConfig, unet), seed + SEED_OFFSETS["appearance"])
    structure = build_structure_net(config, flags, seed + SEED_OFFSETS["structure"])
    sgem = init_sgem(
        config.sgem,
        seed + SEED_OFFSETS["sgem"],
        image_channels=config.image_channels,
        guided=not flags.disable_guidance,
    )
    framework = LowLightFramework(appearance, structure, sgem, detach_structure=flags.detach_structure)
    logger.info(
        "framework.built",
        ablations=flags.enabled(),
        parameters={name: sum(p.numel() for p in group) for name, group in framework.parameter_groups().items()},
    )
    return framework


def build_discriminator(config: ModelConfig, flags: AblationFlags, seed: int) -> typing.Optional[Discriminator]:
    if flags.resolved().disable_gan:
        return None
    return init_discriminator(config.discriminator, seed + SEED_OFFSETS["discriminator"])

import typing
import structlog

import torch

from lowlight_structure.config import LossWeights, RunConfig
from lowlight_structure.losses import PerceptualExtractor, build_perceptual_extractor
from lowlight_structure.nets import LowLightFramework, build_discriminator, build_framework
from lowlight_structure.nets.generator import Discriminator
from lowlight_structure.training.optim import Adam

logger = structlog.get_logger(__name__)

__all__ = ('TrainState', 'init_train_state')


class TrainState:
    """Everything a training run mutates: models, optimizer moments, step and RNG state."""

    def __init__(
        self,
        config: RunConfig,
        framework: LowLightFramework,
        discriminator: typing.Optional[Discriminator],
        extractor: typing.Optional[PerceptualExtractor],
        step: int = 0,
    ):
        train = config.train
        self.config = config
        self.framework = framework
        self.discriminator = discriminator
        self.extractor = extractor
        self.step = step
        self.seed = train.seed
        self.flags = train.ablation.resolved()
        self.weights: LossWeights = train.effective_weights()
        self.pixel_norm = config.model.perceptual.pixel_norm
        self.main_optimizer = Adam(
            dict(framework.named_parameters()), train.lr_main, train.beta1, train.beta2, train.adam_eps
        )
        self.disc_optimizer = (
            Adam(dict(discriminator.named_parameters()), train.lr_disc, train.beta1, train.beta2, train.adam_eps)
            if discriminator is not None
            else None
        )
        self.rng_state = torch.get_rng_state()

    def modules(self) -> typing.Dict[str, torch.nn.Module]:
        modules = {"framework": self.framework}
        if self.discriminator is not None:
            modules["discriminator"] = self.discriminator
        return modules

    def optimizers(self) -> typing.Dict[str, Adam]:
        optimizers = {"main": self.main_optimizer}
        if self.disc_optimizer is not None:
            optimizers["disc"] = self.disc_optimizer
        return optimizers


def init_train_state(config: RunConfig, step: int = 0) -> TrainState:
    model, train = config.model, config.train
    flags = train.ablation.resolved()
    framework = build_framework(model, flags, train.seed)
    discriminator = build_discriminator(model, flags, train.seed)
    weights = train.effective_weights()
    extractor = None
    if weights.appearance > 0 or weights.enhancement > 0:
        extractor = build_perceptual_extractor(model.perceptual, model.image_channels)
    return TrainState(config, framework, discriminator, extractor, step)

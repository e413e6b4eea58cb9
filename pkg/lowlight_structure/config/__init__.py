import json
import math
import typing
import hashlib
import structlog

import lowlight_structure.errors as errors

logger = structlog.get_logger(__name__)

try:
    import marshmallow
    import marshmallow_objects as ms
except ImportError as e:
    logger.warn("marshmallow_objects module not found")

fields = ms.fields
validate = marshmallow.validate

__all__ = (
    'CannyConfig', 'DegradeConfig', 'UNetConfig', 'SafeConfig', 'GeneratorConfig',
    'DiscriminatorConfig', 'SgemConfig', 'PerceptualConfig', 'LossWeights',
    'AblationFlags', 'TrainConfig', 'ModelConfig', 'RunConfig', 'load_run_config',
    'build_config', 'config_hash', 'spatial_multiple',
)

POSITIVE = validate.Range(min=0, min_inclusive=False)
NON_NEGATIVE = validate.Range(min=0)


class ConfigModel(ms.Model):
    """Model whose nested sections fall back to their own defaults when omitted."""

    @marshmallow.pre_load
    def default_sections(self, data, **kwargs):
        # runs on the generated schema, so sections come from its nested fields
        if not isinstance(data, dict):
            return data
        data = dict(data)
        for name, field in self.declared_fields.items():
            if isinstance(field, marshmallow.fields.Nested) and data.get(name) is None:
                data[name] = {}
        return data


class CannyConfig(ConfigModel):
    sigma = fields.Float(load_default=1.0, validate=POSITIVE)
    low_threshold = fields.Float(load_default=0.1, validate=NON_NEGATIVE)
    high_threshold = fields.Float(load_default=0.2, validate=POSITIVE)
    relative = fields.Bool(load_default=True)


class DegradeConfig(ConfigModel):
    exposure_gain = fields.Float(
        load_default=0.25, validate=validate.Range(min=0, max=1, min_inclusive=False)
    )
    gamma = fields.Float(load_default=1.2, validate=POSITIVE)
    read_noise_sigma = fields.Float(load_default=0.01, validate=NON_NEGATIVE)
    shot_noise_scale = fields.Float(load_default=0.02, validate=NON_NEGATIVE)
    seed = fields.Int(load_default=0)


class UNetConfig(ConfigModel):
    depth = fields.Int(load_default=3, validate=validate.Range(min=2))
    base_channels = fields.Int(load_default=16, validate=validate.Range(min=1))
    channel_multipliers = fields.List(
        fields.Int(validate=validate.Range(min=1)), load_default=lambda: [1, 2, 4]
    )
    in_channels = fields.Int(load_default=3, validate=validate.OneOf([1, 3, 6]))
    out_channels = fields.Int(load_default=3, validate=validate.OneOf([1, 3]))


class SafeConfig(ConfigModel):
    num_levels = fields.Int(load_default=3, validate=validate.Range(min=1))
    channels = fields.List(
        fields.Int(validate=validate.Range(min=1)), load_default=lambda: [8, 16, 32]
    )
    window_size = fields.Int(load_default=8, validate=validate.Range(min=1))
    heads = fields.Int(load_default=2, validate=validate.Range(min=1))
    mlp_ratio = fields.Float(load_default=2.0, validate=POSITIVE)
    sre_layers = fields.Int(load_default=2, validate=validate.Range(min=1))


class GeneratorConfig(ConfigModel):
    dim_z = fields.Int(load_default=64, validate=validate.Range(min=1))
    dim_w = fields.Int(load_default=64, validate=validate.Range(min=1))
    mapping_layers = fields.Int(load_default=2, validate=validate.Range(min=1))
    channels = fields.List(
        fields.Int(validate=validate.Range(min=1)), load_default=lambda: [32, 32, 16, 8]
    )
    const_size = fields.Int(load_default=4, validate=validate.Range(min=1))


class DiscriminatorConfig(ConfigModel):
    channels = fields.List(
        fields.Int(validate=validate.Range(min=1)), load_default=lambda: [8, 16, 32]
    )


class SgemConfig(ConfigModel):
    levels = fields.Int(load_default=3, validate=validate.Range(min=2))
    channels = fields.List(
        fields.Int(validate=validate.Range(min=1)), load_default=lambda: [16, 32, 64]
    )
    kernel_size = fields.Int(load_default=3, validate=validate.Range(min=1))
    guidance_hidden = fields.Int(load_default=16, validate=validate.Range(min=1))
    eps = fields.Float(load_default=1e-5, validate=POSITIVE)


class PerceptualConfig(ConfigModel):
    kind = fields.Str(load_default="random", validate=validate.OneOf(["random", "vgg16"]))
    seed = fields.Int(load_default=1234)
    channels = fields.List(
        fields.Int(validate=validate.Range(min=1)), load_default=lambda: [16, 32, 64, 64]
    )
    pixel_norm = fields.Str(load_default="l1", validate=validate.OneOf(["l1", "l2"]))


class LossWeights(ConfigModel):
    appearance = fields.Float(load_default=1.0, validate=NON_NEGATIVE)
    structure = fields.Float(load_default=1.0, validate=NON_NEGATIVE)
    adversarial = fields.Float(load_default=0.001, validate=NON_NEGATIVE)
    enhancement = fields.Float(load_default=1.0, validate=NON_NEGATIVE)

    def as_tuple(self) -> typing.Tuple[float, float, float, float]:
        return (self.appearance, self.structure, self.adversarial, self.enhancement)


ABLATION_ALIASES = {
    "disable_A": "disable_appearance",
    "disable_S": "disable_structure",
    "disable_F": "disable_safe",
}


class AblationFlags(ConfigModel):
    disable_appearance = fields.Bool(load_default=False)
    disable_structure = fields.Bool(load_default=False)
    disable_guidance = fields.Bool(load_default=False)
    disable_gan = fields.Bool(load_default=False)
    disable_safe = fields.Bool(load_default=False)
    baseline_edge_net = fields.Bool(load_default=False)
    detach_structure = fields.Bool(load_default=False)

    def resolved(self) -> "AblationFlags":
        """Apply flag implications; removing the structure model removes its consumers."""
        values = self.dump()
        if values["disable_structure"]:
            if values["baseline_edge_net"] or values["disable_safe"]:
                raise errors.ConfigurationError(
                    description="disable_structure cannot be combined with structure-model variants"
                )
            values["disable_guidance"] = True
            values["disable_gan"] = True
        if values["baseline_edge_net"] and values["disable_safe"]:
            raise errors.ConfigurationError(
                description="baseline_edge_net replaces the whole structure model; drop disable_safe"
            )
        return AblationFlags(**values)

    def enabled(self) -> typing.List[str]:
        return sorted(name for name, value in self.dump().items() if value)


class TrainConfig(ConfigModel):
    steps = fields.Int(load_default=500, validate=validate.Range(min=1))
    batch_size = fields.Int(load_default=4, validate=validate.Range(min=1))
    lr_main = fields.Float(load_default=1e-3, validate=POSITIVE)
    lr_disc = fields.Float(load_default=1e-4, validate=POSITIVE)
    beta1 = fields.Float(load_default=0.9, validate=validate.Range(min=0, max=1, max_inclusive=False))
    beta2 = fields.Float(load_default=0.999, validate=validate.Range(min=0, max=1, max_inclusive=False))
    adam_eps = fields.Float(load_default=1e-8, validate=POSITIVE)
    seed = fields.Int(load_default=0)
    checkpoint_every = fields.Int(load_default=100, validate=validate.Range(min=1))
    prefetch = fields.Int(load_default=2, validate=validate.Range(min=1))
    weights = ms.NestedModel(LossWeights)
    ablation = ms.NestedModel(AblationFlags)

    def effective_weights(self) -> LossWeights:
        """Loss weights after ablations: terms of removed components are forced to 0."""
        flags = self.ablation.resolved()
        values = self.weights.dump()
        if flags.disable_appearance:
            values["appearance"] = 0.0
        if flags.disable_structure:
            values["structure"] = 0.0
        if flags.disable_gan:
            values["adversarial"] = 0.0
        return LossWeights(**values)


class ModelConfig(ConfigModel):
    image_channels = fields.Int(load_default=3, validate=validate.OneOf([1, 3]))
    appearance = ms.NestedModel(UNetConfig)
    safe = ms.NestedModel(SafeConfig)
    generator = ms.NestedModel(GeneratorConfig)
    discriminator = ms.NestedModel(DiscriminatorConfig)
    sgem = ms.NestedModel(SgemConfig)
    perceptual = ms.NestedModel(PerceptualConfig)

    def check(self) -> "ModelConfig":
        if len(self.appearance.channel_multipliers) != self.appearance.depth:
            raise errors.ConfigurationError(
                description="appearance.channel_multipliers needs one entry per level"
            )
        if len(self.safe.channels) != self.safe.num_levels:
            raise errors.ConfigurationError(description="safe.channels needs one entry per level")
        if len(self.generator.channels) != self.safe.num_levels + 1:
            raise errors.ConfigurationError(
                description="generator.channels needs num_levels + 1 entries"
            )
        if len(self.sgem.channels) != self.sgem.levels:
            raise errors.ConfigurationError(description="sgem.channels needs one entry per level")
        if self.sgem.kernel_size % 2 == 0:
            raise errors.ConfigurationError(description="sgem.kernel_size must be odd")
        if any(channels % self.safe.heads for channels in self.safe.channels):
            raise errors.ConfigurationError(description="safe.heads must divide every level's channels")
        return self


class DataConfig(ConfigModel):
    manifest = fields.Str(load_default=None, allow_none=True)
    source_dir = fields.Str(load_default=None, allow_none=True)
    workers = fields.Int(load_default=1, validate=validate.Range(min=1))


class RunConfig(ConfigModel):
    output_dir = fields.Str(load_default="runs/default")
    log_level = fields.Str(load_default="info")
    model = ms.NestedModel(ModelConfig)
    train = ms.NestedModel(TrainConfig)
    degrade = ms.NestedModel(DegradeConfig)
    canny = ms.NestedModel(CannyConfig)
    data = ms.NestedModel(DataConfig)


def build_config(model_class: "typing.Type[ms.Model]", data: typing.Optional[dict] = None):
    try:
        return model_class(**(data or {}))
    except marshmallow.ValidationError as err:
        raise errors.SchemaValidationError(err.messages)


def check_canny(config: CannyConfig) -> CannyConfig:
    if config.low_threshold >= config.high_threshold:
        raise errors.ConfigurationError(
            description="canny.low_threshold must be below canny.high_threshold"
        )
    return config


def load_run_config(path: typing.Optional[str] = None, overrides: typing.Optional[dict] = None) -> RunConfig:
    data = {}
    if path:
        try:
            with open(path, "r") as handle:
                data = json.load(handle)
        except FileNotFoundError:
            raise errors.ObjectDoesntExistError("Config", "path", path)
        except ValueError as e:
            raise errors.ConfigurationError(description=f"{path} is not valid JSON: {e}")
    data = merge_dicts(data, overrides or {})
    config = build_config(RunConfig, data)
    config.model.check()
    config.train.ablation.resolved()
    check_canny(config.canny)
    return config


def merge_dicts(base: dict, overrides: dict) -> dict:
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge_dicts(merged[key], value)
        else:
            merged[key] = value
    return merged


def config_hash(*configs: "ms.Model") -> str:
    canonical = json.dumps([config.dump() for config in configs], sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def spatial_multiple(config: ModelConfig) -> int:
    """Side-length multiple every network accepts without further padding."""
    safe = config.safe
    factors = [
        2 ** (config.appearance.depth - 1),
        2 ** (config.sgem.levels - 1),
        2 ** safe.num_levels,
        safe.window_size * 2 ** (safe.num_levels - 1),
    ]
    multiple = 1
    for factor in factors:
        multiple = multiple * factor // math.gcd(multiple, factor)
    return multiple

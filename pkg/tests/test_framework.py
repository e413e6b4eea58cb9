import pytest
import torch

import lowlight_structure.errors as errors
from lowlight_structure.config import AblationFlags, build_config
from lowlight_structure.nets import LowLightFramework, build_discriminator, build_framework
from lowlight_structure.nets.generator import BaselineEdgeNet
from lowlight_structure.nets.safe import PlainEncoder
from tests.conftest import randomize_


def flags(**values) -> AblationFlags:
    return build_config(AblationFlags, values)


@pytest.fixture
def image():
    return torch.rand(2, 3, 16, 16, generator=torch.Generator().manual_seed(0))


def test_outputs(tiny_model, image):
    framework = build_framework(tiny_model, flags(), seed=0)
    outputs = framework(image)
    assert outputs.appearance.shape == image.shape
    assert outputs.edges.shape == (2, 1, 16, 16)
    assert outputs.enhanced.shape == image.shape
    for tensor in outputs:
        assert 0.0 <= float(tensor.min()) and float(tensor.max()) <= 1.0


def test_enhancer_starts_as_identity_on_appearance(tiny_model, image):
    outputs = build_framework(tiny_model, flags(), seed=0)(image)
    assert torch.equal(outputs.enhanced, outputs.appearance.clamp(0.0, 1.0))


def test_construction_is_seeded(tiny_model, image):
    a = build_framework(tiny_model, flags(), seed=5)
    b = build_framework(tiny_model, flags(), seed=5)
    for (name, p), (_, q) in zip(a.named_parameters(), b.named_parameters()):
        assert torch.equal(p, q), name
    c = build_framework(tiny_model, flags(), seed=6)
    assert not torch.equal(a.appearance.head.weight, c.appearance.head.weight)


def test_disabling_a_component_keeps_the_others(tiny_model):
    full = build_framework(tiny_model, flags(), seed=0)
    no_gan = build_framework(tiny_model, flags(disable_gan=True), seed=0)
    for (name, p), (_, q) in zip(full.named_parameters(), no_gan.named_parameters()):
        assert torch.equal(p, q), name


def test_without_appearance_model_input_is_the_estimate(tiny_model, image):
    framework = build_framework(tiny_model, flags(disable_appearance=True), seed=0)
    assert framework.appearance is None
    outputs = framework(image)
    assert torch.equal(outputs.appearance, image)
    assert torch.allclose(outputs.enhanced, image, atol=1e-6)


def test_without_structure_model(tiny_model, image):
    framework = build_framework(tiny_model, flags(disable_structure=True), seed=0)
    assert framework.structure is None and not framework.sgem.guided
    outputs = framework(image)
    assert outputs.edges is None
    assert "structure" not in framework.parameter_groups()
    assert build_discriminator(tiny_model, flags(disable_structure=True), seed=0) is None


def test_structure_variants(tiny_model):
    assert isinstance(build_framework(tiny_model, flags(disable_safe=True), seed=0).structure.encoder, PlainEncoder)
    assert isinstance(build_framework(tiny_model, flags(baseline_edge_net=True), seed=0).structure, BaselineEdgeNet)
    with pytest.raises(errors.ConfigurationError):
        build_framework(tiny_model, flags(disable_structure=True, disable_safe=True), seed=0)


def _structure_grad_norm(framework: LowLightFramework, image: torch.Tensor) -> float:
    framework.zero_grad()
    framework(image).enhanced.sum().backward()
    return sum(float(p.grad.abs().sum()) for p in framework.structure.parameters() if p.grad is not None)


def test_detached_structure_gets_no_enhancement_gradient(tiny_model, image):
    attached = randomize_(build_framework(tiny_model, flags(), seed=0), seed=1)
    detached = randomize_(build_framework(tiny_model, flags(detach_structure=True), seed=0), seed=1)
    assert _structure_grad_norm(attached, image) > 0
    assert _structure_grad_norm(detached, image) == 0


def test_rejects_non_finite_input(tiny_model, image):
    image[0, 0, 0, 0] = float("nan")
    with pytest.raises(errors.CorruptStateError):
        build_framework(tiny_model, flags(), seed=0)(image)


def test_rejects_bad_layout(tiny_model):
    with pytest.raises(errors.UsageError):
        build_framework(tiny_model, flags(), seed=0)(torch.rand(3, 16, 16))

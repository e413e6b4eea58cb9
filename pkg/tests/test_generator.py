import torch
import torch.nn as nn

import pytest

import lowlight_structure.errors as errors
from lowlight_structure.config import AblationFlags, DiscriminatorConfig, build_config
from lowlight_structure.gradcheck import finite_difference_check
from lowlight_structure.nets.generator import (
    BaselineEdgeNet, LatentMapping, StructureNet, build_structure_net, init_discriminator,
)
from lowlight_structure.nets.layers import seeded
from lowlight_structure.nets.safe import PlainEncoder, SafeEncoder


def structure_net(tiny_model, flags=None) -> nn.Module:
    return build_structure_net(tiny_model, flags or build_config(AblationFlags), seed=0)


def test_output_shape_and_range(tiny_model):
    net = structure_net(tiny_model)
    edges = net(torch.rand(2, 3, 32, 32))
    assert edges.shape == (2, 1, 32, 32)
    assert bool(((edges > 0) & (edges < 1)).all())


def test_default_shapes():
    from lowlight_structure.config import ModelConfig

    net = structure_net(build_config(ModelConfig))
    assert net(torch.rand(1, 3, 64, 64)).shape == (1, 1, 64, 64)


def test_deterministic(tiny_model):
    net = structure_net(tiny_model)
    x = torch.rand(1, 3, 16, 16)
    assert torch.equal(net(x), net(x))


def test_pooling_of_constant_feature(tiny_model):
    mapping = LatentMapping(8, tiny_model.generator)
    feature = torch.arange(8, dtype=torch.float32).view(1, 8, 1, 1).expand(1, 8, 5, 7)
    assert torch.equal(mapping.pool(feature), torch.arange(8, dtype=torch.float32).view(1, 8))


def test_pooling_scalar_mean(tiny_model):
    mapping = LatentMapping(3, tiny_model.generator)
    feature = torch.rand(1, 3, 4, 6, dtype=torch.float64)
    for c in range(3):
        values = feature[0, c].flatten().tolist()
        assert float(mapping.pool(feature)[0, c]) == pytest.approx(sum(values) / len(values), abs=1e-7)


@pytest.mark.parametrize("size", [16, 32])
def test_latent_dims_independent_of_size(tiny_model, size):
    net = structure_net(tiny_model)
    codes = net.intermediates(torch.rand(1, 3, size, size))["codes"]
    assert codes.z.shape == (1, tiny_model.generator.dim_z)
    assert codes.w.shape == (1, tiny_model.generator.dim_w)


def test_zero_injection_ignores_pyramid(tiny_model):
    net = structure_net(tiny_model)
    for block in net.generator.blocks:
        nn.init.zeros_(block.inject.weight)
    parts = net.intermediates(torch.rand(1, 3, 16, 16))
    noisy = [f + torch.randn_like(f) for f in parts["pyramid"]]
    assert torch.equal(net.generate(parts["codes"], parts["pyramid"]), net.generate(parts["codes"], noisy))


def test_branch_isolation(tiny_model):
    net = structure_net(tiny_model)
    assert isinstance(net.encoder, SafeEncoder)
    branch = 3
    level = net.encoder.levels[0]
    fuse = level.branches[branch].fuse
    for p in fuse.parameters():
        nn.init.zeros_(p)
    image = torch.rand(1, 3, 16, 16)
    baseline = net(image)

    def perturb(index, maps):
        if index != 0:
            return maps
        maps = list(maps)
        maps[branch - 1] = maps[branch - 1] + torch.randn_like(maps[branch - 1])
        return maps

    assert torch.equal(net(image, gradient_hook=perturb), baseline)


def test_disable_safe_uses_plain_encoder(tiny_model):
    net = structure_net(tiny_model, build_config(AblationFlags, {"disable_safe": True}))
    assert isinstance(net.encoder, PlainEncoder)
    pyramid = net.intermediates(torch.rand(1, 3, 16, 16))["pyramid"]
    assert [tuple(f.shape) for f in pyramid] == [(1, 4, 16, 16), (1, 8, 8, 8), (1, 8, 4, 4)]


def test_baseline_edge_net(tiny_model):
    net = structure_net(tiny_model, build_config(AblationFlags, {"baseline_edge_net": True}))
    assert isinstance(net, BaselineEdgeNet)
    assert net(torch.rand(1, 3, 16, 16)).shape == (1, 1, 16, 16)


def test_disable_structure_builds_nothing(tiny_model):
    assert structure_net(tiny_model, build_config(AblationFlags, {"disable_structure": True})) is None


def test_generator_rejects_wrong_pyramid(tiny_model):
    net = structure_net(tiny_model)
    parts = net.intermediates(torch.rand(1, 3, 16, 16))
    with pytest.raises(errors.UsageError):
        net.generate(parts["codes"], parts["pyramid"][:-1])


def test_structure_finite_differences(tiny_model):
    with seeded(2):
        net = StructureNet(tiny_model.safe, tiny_model.generator).double()
    image = torch.rand(1, 3, 16, 16, dtype=torch.float64, generator=torch.Generator().manual_seed(1))
    params = dict(net.named_parameters())
    names = sorted(params)
    picks = torch.randperm(len(names), generator=torch.Generator().manual_seed(0))[:10].tolist()
    result = finite_difference_check(lambda: net(image).sum(), {names[i]: params[names[i]] for i in picks}, 1)
    assert result.checked == 10
    assert result.max_error < 1e-3, result.worst


def discriminator():
    return init_discriminator(build_config(DiscriminatorConfig, {"channels": [4, 8]}), seed=0)


def test_discriminator_logits_per_image():
    assert discriminator()(torch.rand(4, 1, 16, 16)).shape == (4,)


def test_zero_discriminator_gives_zero_logits():
    model = discriminator()
    for p in model.parameters():
        nn.init.zeros_(p)
    assert bool((model(torch.rand(3, 1, 16, 16)) == 0).all())


def test_discriminator_input_gradient():
    model = discriminator().double()
    edges = torch.rand(1, 1, 16, 16, dtype=torch.float64, generator=torch.Generator().manual_seed(3))
    edges.requires_grad_(True)
    model(edges).mean().backward()
    grad = edges.grad.clone()
    assert bool((grad != 0).any())
    index = tuple(int(i) for i in torch.nonzero(grad)[0])
    h = 1e-3
    with torch.no_grad():
        plus, minus = edges.clone(), edges.clone()
        plus[index] += h
        minus[index] -= h
        numeric = (float(model(plus).mean()) - float(model(minus).mean())) / (2 * h)
    assert abs(numeric - float(grad[index])) / max(abs(numeric), abs(float(grad[index])), 1e-6) < 1e-4

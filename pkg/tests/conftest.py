import copy
import json
import pathlib

import pytest
import torch

from lowlight_structure.config import CannyConfig, DegradeConfig, ModelConfig, RunConfig, build_config
from lowlight_structure.data import PairedDataset, build_dataset, synthesize_scenes

# Smallest widths that still exercise every mechanism; sides must be multiples of 8.
TINY_MODEL = {
    "appearance": {"depth": 3, "base_channels": 4, "channel_multipliers": [1, 2, 2]},
    "safe": {"num_levels": 2, "channels": [4, 8], "window_size": 4, "heads": 2, "mlp_ratio": 1.0, "sre_layers": 1},
    "generator": {"dim_z": 8, "dim_w": 8, "mapping_layers": 1, "channels": [8, 8, 4], "const_size": 4},
    "discriminator": {"channels": [4, 8]},
    "sgem": {"levels": 3, "channels": [4, 8, 8], "guidance_hidden": 4},
    "perceptual": {"channels": [4, 4, 8, 8]},
}


@pytest.fixture
def tiny_model_dict():
    return copy.deepcopy(TINY_MODEL)


@pytest.fixture
def tiny_model(tiny_model_dict) -> ModelConfig:
    return build_config(ModelConfig, tiny_model_dict).check()


@pytest.fixture
def run_config_dict(tmp_path, tiny_model_dict):
    def make(output: str = "run", **train):
        settings = {"steps": 4, "batch_size": 2, "checkpoint_every": 2, "prefetch": 2, "seed": 3}
        settings.update(train)
        return {
            "output_dir": str(tmp_path / output),
            "model": copy.deepcopy(tiny_model_dict),
            "train": settings,
        }

    return make


@pytest.fixture
def run_config(run_config_dict):
    def make(output: str = "run", **train) -> RunConfig:
        return build_config(RunConfig, run_config_dict(output, **train))

    return make


@pytest.fixture
def dataset_dir(tmp_path) -> pathlib.Path:
    source = tmp_path / "source"
    synthesize_scenes(source, 4, size=16, seed=11)
    out = tmp_path / "dataset"
    build_dataset(source, out, build_config(DegradeConfig), build_config(CannyConfig))
    return out


@pytest.fixture
def dataset(dataset_dir) -> PairedDataset:
    return PairedDataset(dataset_dir)


@pytest.fixture
def config_file(tmp_path, run_config_dict):
    def write(name: str = "config.json", **train) -> str:
        path = tmp_path / name
        path.write_text(json.dumps(run_config_dict(**train)))
        return str(path)

    return write


def randomize_(module: torch.nn.Module, scale: float = 0.1, seed: int = 0) -> torch.nn.Module:
    """Perturb every parameter so zero-initialized heads stop masking gradients."""
    generator = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.add_(scale * torch.randn(p.shape, generator=generator, dtype=p.dtype))
    return module

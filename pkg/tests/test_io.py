import numpy as np
import pytest
import torch

import lowlight_structure.errors as errors
from lowlight_structure.imaging.io import PadRecord, pad_to_multiple, quantize_8bit, read_image, unpad, write_image


@pytest.mark.parametrize("seed", range(5))
def test_png_round_trip_within_quantization_bound(tmp_path, seed):
    image = torch.from_numpy(np.random.default_rng(seed).uniform(size=(1, 3, 9, 11))).float()
    write_image(tmp_path / "x.png", image)
    again = read_image(tmp_path / "x.png")
    assert again.shape == image.shape and again.dtype == torch.float32
    assert float((again - image).abs().max()) <= 1 / 510 + 1e-7


def test_quantize_matches_reload(tmp_path):
    image = torch.rand(1, 1, 8, 8, generator=torch.Generator().manual_seed(1))
    write_image(tmp_path / "g.png", image)
    assert torch.equal(read_image(tmp_path / "g.png"), quantize_8bit(image))


def test_sixteen_bit_grayscale(tmp_path):
    image = torch.linspace(0, 1, 64, dtype=torch.float64).view(1, 1, 8, 8)
    write_image(tmp_path / "deep.png", image, bit_depth=16)
    assert float((read_image(tmp_path / "deep.png").double() - image).abs().max()) <= 1 / 131070 + 1e-7


def test_unreadable_file_names_sample(tmp_path):
    path = tmp_path / "broken.png"
    path.write_bytes(b"not a png")
    with pytest.raises(errors.DataLoadError) as info:
        read_image(path, "broken")
    assert info.value.fields["sample_id"] == "broken"


def test_pad_odd_image_to_multiple_of_eight():
    image = torch.rand(1, 3, 63, 63)
    padded, record = pad_to_multiple(image, 8)
    assert padded.shape == (1, 3, 64, 64)
    assert (record.bottom, record.right) == (1, 1)
    assert torch.equal(unpad(padded, record), image)
    # reflection: the added row mirrors row 61 about the border row 62
    assert torch.equal(padded[..., 63, :63], image[..., 61, :])


def test_pad_is_noop_when_divisible():
    image = torch.rand(1, 1, 16, 16)
    padded, record = pad_to_multiple(image, 8)
    assert padded is image and record == PadRecord(0, 0, 16, 16)


def test_pad_to_common_target():
    padded, record = pad_to_multiple(torch.rand(1, 1, 10, 12), 8, target=(24, 16))
    assert padded.shape[-2:] == (24, 16) and record.bottom == 14


@pytest.mark.filterwarnings("error:The given NumPy array is not writable")
def test_read_returns_owned_memory(tmp_path):
    write_image(tmp_path / "x.png", torch.rand(1, 3, 4, 4))
    image = read_image(tmp_path / "x.png")
    image.add_(0.0)
    assert image.shape == (1, 3, 4, 4)

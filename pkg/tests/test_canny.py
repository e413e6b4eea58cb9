import numpy as np
import pytest
import torch

import lowlight_structure.errors as errors
from lowlight_structure.imaging import canny_edges


def half_split(size: int = 16) -> torch.Tensor:
    img = torch.zeros(1, 1, size, size)
    img[..., size // 2:] = 1.0
    return img


def test_uniform_gray_has_no_edges():
    assert bool((canny_edges(torch.full((1, 3, 16, 16), 0.4)) == 0).all())


def test_half_split_gives_one_column():
    edges = canny_edges(half_split())[0, 0]
    columns = torch.nonzero(edges.sum(dim=0)).flatten().tolist()
    assert len(columns) == 1
    assert bool((edges[:, columns[0]] == 1).all())
    assert columns[0] in (7, 8)


def test_half_split_agrees_with_reference_detector():
    feature = pytest.importorskip("skimage.feature")
    image = half_split()[0, 0].numpy().astype(np.float64)
    ours = canny_edges(image)[0, 0].numpy().astype(bool)
    reference = feature.canny(image, sigma=1.0, low_threshold=0.1, high_threshold=0.2, use_quantiles=False)
    interior = slice(2, -2)
    ours_columns = set(np.nonzero(ours[interior].any(axis=0))[0])
    reference_columns = set(np.nonzero(reference[interior].any(axis=0))[0])
    assert reference_columns
    assert ours_columns <= reference_columns


def test_output_is_binary_and_shaped():
    img = torch.rand(2, 3, 24, 20, generator=torch.Generator().manual_seed(0))
    edges = canny_edges(img)
    assert edges.shape == (2, 1, 24, 20)
    assert set(edges.unique().tolist()) <= {0.0, 1.0}


def test_accepts_plain_arrays():
    edges = canny_edges(np.zeros((8, 8), dtype=np.float32))
    assert edges.shape == (1, 1, 8, 8) and edges.dtype == torch.float32


@pytest.mark.parametrize("offset", [0.01, 0.05, 0.09])
def test_invariant_to_brightness_offset(offset):
    rng = np.random.default_rng(5)
    from scipy import ndimage

    base = ndimage.gaussian_filter(rng.uniform(size=(32, 32)), 2.0) * 0.8
    a = canny_edges(torch.from_numpy(base))
    b = canny_edges(torch.from_numpy(base + offset))
    assert torch.equal(a, b)


def test_threshold_order_enforced():
    with pytest.raises(errors.ConfigurationError):
        canny_edges(half_split(), low_thresh=0.3, high_thresh=0.2)


def test_absolute_thresholds():
    faint = half_split() * 0.01
    assert float(canny_edges(faint, 0.1, 0.2, relative=False).sum()) == 0.0
    assert float(canny_edges(faint, 0.1, 0.2, relative=True).sum()) > 0.0

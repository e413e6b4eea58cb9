import math

import numpy as np
import pytest
import torch

import lowlight_structure.errors as errors
from lowlight_structure.imaging import edge_metrics, psnr, ssim
from lowlight_structure.imaging.metrics import build_metric_report, gaussian_window


def rand(shape, seed):
    return torch.from_numpy(np.random.default_rng(seed).uniform(size=shape))


def test_psnr_identical_is_capped():
    a = rand((2, 3, 8, 8), 0)
    assert psnr(a, a).tolist() == [100.0, 100.0]


def test_psnr_uniform_difference():
    a = torch.zeros(1, 3, 8, 8, dtype=torch.float64)
    value = float(psnr(a, a + 16 / 255))
    assert value == pytest.approx(20 * math.log10(255 / 16), abs=1e-9)


@pytest.mark.parametrize("seed", range(20))
def test_psnr_scalar_oracle(seed):
    a, b = rand((1, 1, 5, 6), seed), rand((1, 1, 5, 6), seed + 100)
    total = 0.0
    for y in range(5):
        for x in range(6):
            total += (float(a[0, 0, y, x]) - float(b[0, 0, y, x])) ** 2
    expected = 10 * math.log10(1.0 / (total / 30))
    assert float(psnr(a, b)) == pytest.approx(expected, abs=1e-9)
    assert float(psnr(a, b)) == float(psnr(b, a))


def test_ssim_identical_is_one():
    a = rand((2, 3, 16, 16), 1)
    assert ssim(a, a).tolist() == [1.0, 1.0]


def test_ssim_constant_images():
    a = torch.full((1, 1, 16, 16), 0.25, dtype=torch.float64)
    b = torch.full((1, 1, 16, 16), 0.75, dtype=torch.float64)
    expected = (2 * 0.25 * 0.75 + 1e-4) / (0.25 ** 2 + 0.75 ** 2 + 1e-4)
    assert float(ssim(a, b)) == pytest.approx(expected, abs=1e-9)


def ssim_oracle(a: np.ndarray, b: np.ndarray) -> float:
    window = gaussian_window(11, 1.5).numpy()
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    H, W = a.shape
    values = []
    for y in range(H - 10):
        for x in range(W - 10):
            pa, pb = a[y:y + 11, x:x + 11], b[y:y + 11, x:x + 11]
            mu_a, mu_b = (window * pa).sum(), (window * pb).sum()
            var_a = (window * (pa - mu_a) ** 2).sum()
            var_b = (window * (pb - mu_b) ** 2).sum()
            cov = (window * (pa - mu_a) * (pb - mu_b)).sum()
            numerator = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
            values.append(numerator / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)))
    return float(np.mean(values))


@pytest.mark.parametrize("seed", range(20))
def test_ssim_window_oracle(seed):
    a, b = rand((1, 1, 13, 14), seed), rand((1, 1, 13, 14), seed + 50)
    assert float(ssim(a, b)) == pytest.approx(ssim_oracle(a[0, 0].numpy(), b[0, 0].numpy()), abs=1e-6)
    assert float(ssim(a, b)) == pytest.approx(float(ssim(b, a)), abs=1e-12)


def test_ssim_color_uses_luminance():
    a, b = rand((1, 3, 12, 12), 3), rand((1, 3, 12, 12), 4)
    weights = torch.tensor([0.299, 0.587, 0.114], dtype=torch.float64).view(1, 3, 1, 1)
    gray_a, gray_b = (a * weights).sum(1, keepdim=True), (b * weights).sum(1, keepdim=True)
    assert float(ssim(a, b)) == pytest.approx(float(ssim(gray_a, gray_b)), abs=1e-12)


def test_ssim_rejects_small_images():
    with pytest.raises(errors.UsageError):
        ssim(torch.zeros(1, 1, 8, 8), torch.zeros(1, 1, 8, 8))


def test_shape_mismatch():
    with pytest.raises(errors.ShapeMismatchError):
        psnr(torch.zeros(1, 1, 8, 8), torch.zeros(1, 1, 8, 9))


def test_edge_metrics_equal_binary():
    gt = (rand((1, 1, 8, 8), 2) > 0.5).double()
    metrics = edge_metrics(gt, gt)
    assert float(metrics["ce"]) < 1e-6
    assert float(metrics["l2"]) == 0.0


def test_edge_metrics_half():
    gt = (rand((1, 1, 8, 8), 3) > 0.5).double()
    assert float(edge_metrics(torch.full_like(gt, 0.5), gt)["ce"]) == pytest.approx(math.log(2), abs=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_edge_metrics_scalar_oracle(seed):
    pred = rand((1, 1, 4, 5), seed)
    gt = (rand((1, 1, 4, 5), seed + 7) > 0.5).double()
    ce = l2 = 0.0
    for p, t in zip(pred.flatten().tolist(), gt.flatten().tolist()):
        p_c = min(max(p, 1e-7), 1 - 1e-7)
        ce += -(t * math.log(p_c) + (1 - t) * math.log(1 - p_c))
        l2 += (p - t) ** 2
    metrics = edge_metrics(pred, gt)
    assert float(metrics["ce"]) == pytest.approx(ce / 20, abs=1e-9)
    assert float(metrics["l2"]) == pytest.approx(l2 / 20, abs=1e-9)
    assert float(metrics["ce"]) >= float(edge_metrics(gt, gt)["ce"])


def test_report_means_match_entries():
    report = build_metric_report(["a", "b", "c"], {"psnr": [10.0, 20.0, 33.0], "ssim": [0.5, 0.7, 0.9]})
    assert report["version"] == 1 and report["count"] == 3
    assert report["mean"]["psnr"] == pytest.approx(sum(e["psnr"] for e in report["images"]) / 3)
    assert report["images"][1] == {"id": "b", "psnr": 20.0, "ssim": 0.7}

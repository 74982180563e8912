"""
Semantic Inpainting Lab - Pixel Metric Tests
"""
import math
import pytest
import sys
import os

import numpy as np
import torch

# srcディレクトリをパスに追加
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.core import Mask
from src.errors import RejectedInputError
from src.metrics import hole_errors, mean_l1, mean_l2, metric_report, psnr, ssim


@pytest.fixture
def image():
    return torch.rand(3, 32, 32, generator=torch.Generator().manual_seed(0), dtype=torch.float64)


class TestErrors:
    """mean_l1 / mean_l2 / psnr のテスト"""

    def test_identical(self, image):
        assert mean_l1(image, image) == 0.0
        assert mean_l2(image, image) == 0.0
        assert math.isinf(psnr(image, image))

    def test_uniform_offset(self):
        """全画素が 16/255 ずれたときの PSNR は約 24.05 dB"""
        y = torch.full((3, 16, 16), 0.5, dtype=torch.float64)
        z = y + 16 / 255
        assert mean_l1(z, y) == pytest.approx(16 / 255)
        assert mean_l2(z, y) == pytest.approx((16 / 255) ** 2)
        assert psnr(z, y) == pytest.approx(24.05, abs=0.01)

    def test_hwc_arrays_accepted(self):
        a = np.zeros((8, 8, 3))
        b = np.ones((8, 8, 3))
        assert mean_l1(a, b) == 1.0
        assert psnr(a, b) == 0.0

    def test_shape_mismatch(self, image):
        with pytest.raises(RejectedInputError, match="DIMENSION_MISMATCH"):
            mean_l1(image, image[:, :16, :16])


class TestSsim:
    """ssim関数のテスト"""

    def test_identical_is_one(self, image):
        assert ssim(image, image) == pytest.approx(1.0)

    def test_symmetric(self, image):
        other = torch.rand(3, 32, 32, generator=torch.Generator().manual_seed(1), dtype=torch.float64)
        assert ssim(image, other) == pytest.approx(ssim(other, image))

    def test_single_window_matches_closed_form(self):
        """8×8 画像（窓1つ）では画像全体の平均・分散・共分散の式と一致する"""
        rng = np.random.default_rng(2)
        gray = rng.random((8, 8))
        a = np.repeat(gray[:, :, None], 3, axis=2)
        b = a * 0.5 + 0.2
        x1, x2 = a.mean(axis=2), b.mean(axis=2)
        mu1, mu2 = x1.mean(), x2.mean()
        var1, var2 = x1.var(), x2.var()
        cov = ((x1 - mu1) * (x2 - mu2)).mean()
        c1, c2 = 0.01 ** 2, 0.03 ** 2
        expected = ((2 * mu1 * mu2 + c1) * (2 * cov + c2)) / ((mu1 ** 2 + mu2 ** 2 + c1) * (var1 + var2 + c2))
        assert ssim(a, b) == pytest.approx(expected, rel=1e-9)

    def test_noise_lowers_ssim(self, image):
        noisy = (image + 0.2 * torch.randn(3, 32, 32, generator=torch.Generator().manual_seed(3),
                                           dtype=torch.float64)).clamp(0, 1)
        assert ssim(noisy, image) < 0.9

    def test_too_small(self):
        with pytest.raises(RejectedInputError, match="IMAGE_TOO_SMALL"):
            ssim(torch.zeros(3, 4, 4), torch.zeros(3, 4, 4))


class TestMetricReport:
    """hole_errors / metric_report のテスト"""

    def test_hole_errors_only_inside(self):
        y = torch.zeros(3, 16, 16, dtype=torch.float64)
        z = y.clone()
        z[:, 4:8, 4:8] = 0.5
        z[:, 12:, 12:] = 1.0
        l1, l2 = hole_errors(z, y, Mask(4, 4, 4, 4, (16, 16)))
        assert l1 == pytest.approx(0.5)
        assert l2 == pytest.approx(0.25)

    def test_empty_hole(self, image):
        assert hole_errors(image, image, Mask.empty((32, 32))) == (None, None)

    def test_report_fields(self, image):
        report = metric_report(image, image, mask=Mask(0, 0, 8, 8, (32, 32)), variant="composited")
        data = report.to_dict()
        assert data["psnr"] == "inf"
        assert data["variant"] == "composited"
        assert data["hole_l1"] == 0.0
        assert data["ssim"] == pytest.approx(1.0)

    def test_unknown_variant(self, image):
        with pytest.raises(RejectedInputError, match="UNKNOWN_VARIANT"):
            metric_report(image, image, variant="blended")


def reference_l1_l2(z: np.ndarray, y: np.ndarray) -> tuple:
    """画素ごとのループで書いた平均 l1・l2"""
    height, width, channels = y.shape
    total_l1 = total_l2 = 0.0
    for i in range(height):
        for j in range(width):
            for c in range(channels):
                diff = float(z[i, j, c]) - float(y[i, j, c])
                total_l1 += abs(diff)
                total_l2 += diff * diff
    count = height * width * channels
    return total_l1 / count, total_l2 / count


def reference_ssim(z: np.ndarray, y: np.ndarray, window: int = 8) -> float:
    """窓ごとのループで書いた SSIM（チャネル平均のグレースケール、一様窓、valid）"""
    gray_z = z.mean(axis=2)
    gray_y = y.mean(axis=2)
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    height, width = gray_y.shape
    values = []
    for top in range(height - window + 1):
        for left in range(width - window + 1):
            a = [float(v) for v in gray_z[top:top + window, left:left + window].ravel()]
            b = [float(v) for v in gray_y[top:top + window, left:left + window].ravel()]
            n = len(a)
            mu_a, mu_b = sum(a) / n, sum(b) / n
            var_a = sum((v - mu_a) ** 2 for v in a) / n
            var_b = sum((v - mu_b) ** 2 for v in b) / n
            cov = sum((p - mu_a) * (q - mu_b) for p, q in zip(a, b)) / n
            values.append(((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                          / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)))
    return sum(values) / len(values)


class TestAgainstLoopReference:
    """ベクトル化した指標とループで書いた定義の一致"""

    @pytest.mark.parametrize("seed", range(50))
    def test_random_pairs(self, seed):
        rng = np.random.default_rng(seed)
        y = rng.random((12, 14, 3))
        z = np.clip(y + rng.normal(0.0, 0.2, size=y.shape), 0.0, 1.0)
        l1, l2 = reference_l1_l2(z, y)
        assert mean_l1(z, y) == pytest.approx(l1, abs=1e-6)
        assert mean_l2(z, y) == pytest.approx(l2, abs=1e-6)
        assert psnr(z, y) == pytest.approx(-10.0 * math.log10(l2), abs=1e-6)
        assert ssim(z, y) == pytest.approx(reference_ssim(z, y), abs=1e-6)

    def test_inverted_checkerboard_is_negative(self):
        """各窓で平均0.5の市松模様を反転すると共分散が負になり SSIM < 0"""
        board = (np.indices((16, 16)).sum(axis=0) % 2).astype(np.float64)
        y = np.repeat((0.1 + 0.8 * board)[:, :, None], 3, axis=2)
        z = 1.0 - y
        value = ssim(z, y)
        assert value < 0
        assert value == pytest.approx(reference_ssim(z, y), abs=1e-6)
        assert value == pytest.approx(-(2 * 0.16 - 0.03 ** 2) / (2 * 0.16 + 0.03 ** 2), abs=1e-6)

"""
Semantic Inpainting Lab - Pixel Metrics
平均 l1・平均 l2・PSNR・SSIM（[0,1] の画素値で計算）
"""
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
import torch
from scipy.signal import convolve2d

from ..core import Mask, to_hwc
from ..errors import RejectedInputError

# SSIM の設定（一様重みの 8×8 窓、安定化定数は [0,1] 画素値に対するもの）
SSIM_WINDOW = 8
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_VARIANT = f"uniform-{SSIM_WINDOW}x{SSIM_WINDOW}-valid-gray-mean"

VARIANTS = ("raw", "composited", "masked")


def as_hwc(image) -> np.ndarray:
    """(3, H, W) テンソルまたは H×W×C 配列を H×W×C の float64 配列にする"""
    if isinstance(image, torch.Tensor):
        if image.dim() != 3 or image.shape[0] != 3:
            raise RejectedInputError(f"INVALID_IMAGE: (3, H, W) が必要です（shape={tuple(image.shape)}）")
        return to_hwc(image)
    array = np.asarray(image, dtype=np.float64)
    if array.ndim == 2:
        array = array[:, :, None]
    if array.ndim != 3:
        raise RejectedInputError(f"INVALID_IMAGE: H×W×C が必要です（shape={array.shape}）")
    return array


def _pair(z, y):
    a, b = as_hwc(z), as_hwc(y)
    if a.shape != b.shape:
        raise RejectedInputError(f"DIMENSION_MISMATCH: {a.shape} と {b.shape}")
    return a, b


def mean_l1(z, y) -> float:
    """全画素・全チャネルの |z - y| の平均（0〜1、%表示は ×100）"""
    a, b = _pair(z, y)
    return float(np.mean(np.abs(a - b)))


def mean_l2(z, y) -> float:
    """全画素・全チャネルの (z - y)² の平均"""
    a, b = _pair(z, y)
    return float(np.mean((a - b) ** 2))


def psnr_from_mse(mse: float) -> float:
    if mse == 0:
        return math.inf
    return -10.0 * math.log10(mse)


def psnr(z, y) -> float:
    """10·log10(1 / MSE)。z = y のときは +inf"""
    return psnr_from_mse(mean_l2(z, y))


def _grayscale(image: np.ndarray) -> np.ndarray:
    return image.mean(axis=2)


def ssim(z, y) -> float:
    """8×8 一様窓の局所 SSIM の平均（グレースケールはチャネル平均）"""
    a, b = _pair(z, y)
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise RejectedInputError(
            f"IMAGE_TOO_SMALL: {a.shape[0]}x{a.shape[1]} は SSIM 窓 {SSIM_WINDOW}x{SSIM_WINDOW} より小さい"
        )
    x1, x2 = _grayscale(a), _grayscale(b)
    window = np.full((SSIM_WINDOW, SSIM_WINDOW), 1.0 / SSIM_WINDOW ** 2)
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2

    mu1 = convolve2d(x1, window, mode="valid")
    mu2 = convolve2d(x2, window, mode="valid")
    mu1_sq, mu2_sq, mu1_mu2 = mu1 * mu1, mu2 * mu2, mu1 * mu2
    sigma1_sq = convolve2d(x1 * x1, window, mode="valid") - mu1_sq
    sigma2_sq = convolve2d(x2 * x2, window, mode="valid") - mu2_sq
    sigma12 = convolve2d(x1 * x2, window, mode="valid") - mu1_mu2

    ssim_map = ((2 * mu1_mu2 + c1) * (2 * sigma12 + c2)) / ((mu1_sq + mu2_sq + c1) * (sigma1_sq + sigma2_sq + c2))
    return float(ssim_map.mean())


def hole_errors(z, y, mask) -> tuple:
    """欠損領域だけの (平均 l1, 平均 l2)。欠損が空なら (None, None)"""
    a, b = _pair(z, y)
    bits = mask.bits().numpy() if isinstance(mask, Mask) else np.asarray(mask, dtype=np.float64)
    bits = bits.reshape(a.shape[0], a.shape[1]) > 0.5
    if not bits.any():
        return None, None
    diff = (a - b)[bits]
    return float(np.mean(np.abs(diff))), float(np.mean(diff ** 2))


@dataclass
class MetricReport:
    """1枚（または平均）の画素指標

    Attributes:
        variant: "raw"（生成器の出力 z）/ "composited"（欠損内だけ z）/ "masked"（欠損入力 x）
        hole_l1, hole_l2: 欠損領域だけの誤差（マスクがないときは None）
    """

    mean_l1: float
    mean_l2: float
    psnr: float
    ssim: float
    variant: str = "raw"
    hole_l1: Optional[float] = None
    hole_l2: Optional[float] = None
    ssim_variant: str = SSIM_VARIANT

    def to_dict(self) -> dict:
        data = asdict(self)
        if math.isinf(data["psnr"]):
            data["psnr"] = "inf"
        return data


def metric_report(z, y, mask=None, variant: str = "raw") -> MetricReport:
    """z と y の指標をまとめて計算する"""
    if variant not in VARIANTS:
        raise RejectedInputError(f"UNKNOWN_VARIANT: {variant!r}（{VARIANTS} のいずれか）")
    hole_l1, hole_l2 = hole_errors(z, y, mask) if mask is not None else (None, None)
    l2 = mean_l2(z, y)
    return MetricReport(
        mean_l1=mean_l1(z, y),
        mean_l2=l2,
        psnr=psnr_from_mse(l2),
        ssim=ssim(z, y),
        variant=variant,
        hole_l1=hole_l1,
        hole_l2=hole_l2,
    )

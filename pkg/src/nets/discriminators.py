"""
Semantic Inpainting Lab - Discriminators
多段の識別ネットワーク：大域 Dg・属性整合 Da・セグメンテーション整合 Ds と、
不一致ペア（W̄a(y), W̄s(y)）のサンプリング
"""
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from ..config import DISCRIMINATOR_DOWNSAMPLE, NUM_ATTRIBUTES, NUM_CLASSES
from ..core import one_hot, spatial_replicate
from ..errors import RejectedInputError

LEAKY_SLOPE = 0.2


def _trunk(in_channels: int, channels: int) -> nn.Sequential:
    """4段のストライド2畳み込み（c, 2c, 4c, 8c）。一辺は 1/16 になる"""
    widths = [in_channels, channels, channels * 2, channels * 4, channels * 8]
    layers = []
    for i in range(4):
        layers.append(nn.Conv2d(widths[i], widths[i + 1], kernel_size=4, stride=2, padding=1))
        layers.append(nn.LeakyReLU(LEAKY_SLOPE))
    return nn.Sequential(*layers)


class GlobalDisc(nn.Module):
    """Dg: 画像全体の自然さを判定する"""

    def __init__(self, image_size: int = 64, channels: int = 32, in_channels: int = 3):
        super().__init__()
        if image_size % DISCRIMINATOR_DOWNSAMPLE:
            raise RejectedInputError(f"INVALID_CANVAS: {image_size} は16の倍数ではありません")
        self.image_size = image_size
        self.in_channels = in_channels
        self.trunk = _trunk(in_channels, channels)
        side = image_size // DISCRIMINATOR_DOWNSAMPLE
        self.head = nn.Linear(channels * 8 * side * side, 1)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        _check_image(self, image, self.in_channels)
        return self.head(self.trunk(image).flatten(1)).squeeze(1)


class AttributeDisc(nn.Module):
    """Da: (画像, 属性ベクトル) の組が本物かつ整合しているかを判定する

    属性は M2×M2 の特徴マップで複製・連結し、1×1畳み込みで 8c に戻す。
    """

    def __init__(self, image_size: int = 64, n_attributes: int = NUM_ATTRIBUTES, channels: int = 32):
        super().__init__()
        if image_size % DISCRIMINATOR_DOWNSAMPLE:
            raise RejectedInputError(f"INVALID_CANVAS: {image_size} は16の倍数ではありません")
        self.image_size = image_size
        self.in_channels = 3
        self.n_attributes = n_attributes
        wide = channels * 8
        self.trunk = _trunk(3, channels)
        self.fusion = nn.Conv2d(wide + n_attributes, wide, kernel_size=1)
        self.post = nn.Sequential(
            nn.LeakyReLU(LEAKY_SLOPE),
            nn.Conv2d(wide, wide, kernel_size=3, padding=1),
            nn.LeakyReLU(LEAKY_SLOPE),
        )
        side = image_size // DISCRIMINATOR_DOWNSAMPLE
        self.head = nn.Linear(wide * side * side, 1)

    def forward(self, image: torch.Tensor, attr: torch.Tensor) -> torch.Tensor:
        _check_image(self, image, 3)
        if attr.dim() != 2 or attr.shape != (image.shape[0], self.n_attributes):
            raise RejectedInputError(
                f"DIMENSION_MISMATCH: attr {tuple(attr.shape)}（({image.shape[0]}, N1={self.n_attributes}) が必要）"
            )
        feature = self.trunk(image)
        grid = spatial_replicate(attr.to(feature.dtype), feature.shape[-1])
        fused = self.fusion(torch.cat([feature, grid], dim=1))
        return self.head(self.post(fused).flatten(1)).squeeze(1)


class SegmentationDisc(GlobalDisc):
    """Ds: 画像と one-hot セグメンテーションを連結した 3 + C チャネルを Dg と同じ本体で判定する"""

    def __init__(self, image_size: int = 64, n_classes: int = NUM_CLASSES, channels: int = 32):
        super().__init__(image_size=image_size, channels=channels, in_channels=3 + n_classes)
        self.n_classes = n_classes

    def forward(self, image: torch.Tensor, seg_onehot: torch.Tensor) -> torch.Tensor:
        if seg_onehot.dim() != 4 or seg_onehot.shape[1] != self.n_classes:
            raise RejectedInputError(
                f"CHANNEL_MISMATCH: segmentation {tuple(seg_onehot.shape)}（C={self.n_classes} の one-hot が必要）"
            )
        if seg_onehot.shape[0] != image.shape[0] or seg_onehot.shape[-2:] != image.shape[-2:]:
            raise RejectedInputError(
                f"DIMENSION_MISMATCH: segmentation {tuple(seg_onehot.shape)} と画像 {tuple(image.shape)}"
            )
        return super().forward(torch.cat([image, seg_onehot.to(image.dtype)], dim=1))


def _check_image(d: nn.Module, image: torch.Tensor, channels: int) -> None:
    if image.dim() != 4 or image.shape[1] != channels:
        raise RejectedInputError(
            f"CHANNEL_MISMATCH: 入力 {tuple(image.shape)}（(B, {channels}, H, W) が必要）"
        )
    if image.shape[-2] != d.image_size or image.shape[-1] != d.image_size:
        raise RejectedInputError(
            f"DIMENSION_MISMATCH: 画像 {image.shape[-2]}x{image.shape[-1]} ≠ 識別器の入力 {d.image_size}x{d.image_size}"
        )


def _as_batch(image: torch.Tensor):
    return (image.unsqueeze(0), True) if image.dim() == 3 else (image, False)


def _seg_input(seg: torch.Tensor, n_classes: int) -> torch.Tensor:
    """ラベルマップなら one-hot に展開する（確率グリッドはそのまま使う）"""
    if seg.dtype.is_floating_point:
        return seg
    return one_hot(seg, n_classes)


@torch.no_grad()
def score_global(d: GlobalDisc, image: torch.Tensor) -> torch.Tensor:
    """Dg(image) ∈ (0,1)。(3,H,W) ならスカラー、(B,3,H,W) なら (B,)"""
    batch, single = _as_batch(image)
    scores = torch.sigmoid(d(batch))
    return scores[0] if single else scores


@torch.no_grad()
def score_attribute(d: AttributeDisc, image: torch.Tensor, attr: torch.Tensor) -> torch.Tensor:
    """Da(image, attr) ∈ (0,1)"""
    batch, single = _as_batch(image)
    if single:
        attr = attr.unsqueeze(0)
    scores = torch.sigmoid(d(batch, attr))
    return scores[0] if single else scores


@torch.no_grad()
def score_segmentation(d: SegmentationDisc, image: torch.Tensor, seg: torch.Tensor) -> torch.Tensor:
    """Ds(image, seg) ∈ (0,1)。seg はラベルマップ（整数）または one-hot"""
    batch, single = _as_batch(image)
    if single:
        seg = seg.unsqueeze(0)
    scores = torch.sigmoid(d(batch, _seg_input(seg, d.n_classes)))
    return scores[0] if single else scores


@dataclass(frozen=True)
class MismatchSample:
    """不一致ペアの取り方

    Attributes:
        indices: 各 i に対する相手の位置（labels[indices] が不一致ラベル）
        degenerate: バッチ内のラベルが全て等しく不一致が作れない（不一致項を省く）
        permutation: indices が並べ替えになっている（位置ごとの選び直しが起きていない）
    """

    indices: np.ndarray
    degenerate: bool
    permutation: bool = True

    def apply(self, labels):
        index = torch.as_tensor(self.indices, dtype=torch.long)
        if isinstance(labels, torch.Tensor):
            return labels[index.to(labels.device)]
        return [labels[i] for i in self.indices]


def _label_keys(labels) -> list:
    if isinstance(labels, torch.Tensor):
        rows = labels.detach().cpu().reshape(labels.shape[0], -1).numpy()
    else:
        rows = [np.asarray(label).reshape(-1) for label in labels]
    return [np.ascontiguousarray(row).tobytes() for row in rows]


def _repair_partner(keys: list, perm: np.ndarray, i: int, order: np.ndarray):
    # perm[i] と perm[j] を入れ替えて i, j の両方が不一致になる j
    for j in order:
        if j != i and keys[j] != keys[i] and keys[perm[j]] != keys[i]:
            return int(j)
    return None


def sample_mismatched(labels, seed: int) -> MismatchSample:
    """バッチ内で別ラベルの相手をシード付きで選ぶ

    シード付きの並べ替えを引き、labels[perm[i]] == labels[i] となる位置を
    不一致の相手との入れ替えで解消する。入れ替えで解消できない位置（[A, A, B] など
    完全な不一致の並べ替えが存在しない場合）だけ、別ラベルの相手を位置ごとに一様に選ぶ。
    全ラベルが等しい場合は恒等写像と degenerate=True を返す。

    Args:
        labels: (B, ...) テンソルまたは長さ B のリスト
        seed: 乱数シード（同じシードなら同じ結果）

    Returns:
        MismatchSample
    """
    keys = _label_keys(labels)
    size = len(keys)
    if size < 2:
        raise RejectedInputError(f"BATCH_TOO_SMALL: バッチサイズ {size}（不一致ペアには2以上が必要）")
    if len(set(keys)) == 1:
        return MismatchSample(indices=np.arange(size), degenerate=True)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(size)
    for i in range(size):
        if keys[perm[i]] != keys[i]:
            continue
        j = _repair_partner(keys, perm, i, rng.permutation(size))
        if j is not None:
            perm[i], perm[j] = perm[j], perm[i]
    permutation = True
    for i in range(size):
        if keys[perm[i]] == keys[i]:
            candidates = [j for j in range(size) if keys[j] != keys[i]]
            perm[i] = candidates[int(rng.integers(len(candidates)))]
            permutation = False
    return MismatchSample(indices=perm, degenerate=False, permutation=permutation)

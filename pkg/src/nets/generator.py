"""
Semantic Inpainting Lab - Generator
セグメンテーションマップを入力に連結し、ボトルネックで属性ベクトルを融合する
エンコーダ・デコーダ型の生成器 G
"""
import torch
import torch.nn as nn

from ..config import GENERATOR_DILATIONS, NUM_ATTRIBUTES, NUM_CLASSES
from ..core import one_hot, spatial_replicate
from ..errors import RejectedInputError


def condition_fuse(feature: torch.Tensor, attr: torch.Tensor) -> torch.Tensor:
    """M1×M1×K の特徴マップに複製した属性ベクトルをチャネル方向に連結する

    Args:
        feature: (B, K, M, M)
        attr: (B, N1)

    Returns:
        (B, K + N1, M, M)。先頭Kチャネルは feature、残りは spatial_replicate(attr, M)
    """
    if attr.dim() != 2 or attr.shape[0] != feature.shape[0]:
        raise RejectedInputError(
            f"DIMENSION_MISMATCH: attr {tuple(attr.shape)} と feature {tuple(feature.shape)} のバッチが合いません"
        )
    if feature.shape[-1] != feature.shape[-2]:
        raise RejectedInputError(f"DIMENSION_MISMATCH: 特徴マップが正方形ではありません {tuple(feature.shape[-2:])}")
    replicated = spatial_replicate(attr.to(feature.dtype), feature.shape[-1])
    return torch.cat([feature, replicated], dim=1)


class GeneratorNet(nn.Module):
    """G(x, Ws(x), Wa(x))

    encoder: (3 + C) → c（ストライド1）→ 2c → 4c（ストライド2×2で H/4 = M1）
    fusion:  4c + N1 → 4c（1×1畳み込み）
    mid:     dilated 畳み込み（拡張率 2, 4, 8, 16）
    decoder: 4c → 2c → c（転置畳み込み）→ 3（sigmoid）
    """

    def __init__(self, n_attributes: int = NUM_ATTRIBUTES, n_classes: int = NUM_CLASSES,
                 channels: int = 48, dilations=GENERATOR_DILATIONS):
        super().__init__()
        self.n_attributes = n_attributes
        self.n_classes = n_classes
        c1, c2, c3 = channels, channels * 2, channels * 4
        self.encoder = nn.Sequential(
            nn.Conv2d(3 + n_classes, c1, kernel_size=5, stride=1, padding=2),
            nn.ELU(),
            nn.Conv2d(c1, c2, kernel_size=3, stride=2, padding=1),
            nn.ELU(),
            nn.Conv2d(c2, c3, kernel_size=3, stride=2, padding=1),
            nn.ELU(),
        )
        self.fusion = nn.Conv2d(c3 + n_attributes, c3, kernel_size=1)
        self.fusion_act = nn.ELU()
        self.mid = nn.Sequential(*[
            nn.Sequential(nn.Conv2d(c3, c3, kernel_size=3, padding=d, dilation=d), nn.ELU())
            for d in dilations
        ])
        self.decoder = nn.Sequential(
            nn.ConvTranspose2d(c3, c2, kernel_size=4, stride=2, padding=1),
            nn.ELU(),
            nn.ConvTranspose2d(c2, c1, kernel_size=4, stride=2, padding=1),
            nn.ELU(),
            nn.Conv2d(c1, 3, kernel_size=3, padding=1),
        )

    def _check_inputs(self, x, seg_onehot, attr):
        if x.dim() != 4 or x.shape[1] != 3:
            raise RejectedInputError(f"CHANNEL_MISMATCH: x は (B, 3, H, W) が必要です（shape={tuple(x.shape)}）")
        if seg_onehot.dim() != 4 or seg_onehot.shape[1] != self.n_classes:
            raise RejectedInputError(
                f"CHANNEL_MISMATCH: segmentation のチャネル数 {seg_onehot.shape[1] if seg_onehot.dim() == 4 else '?'}"
                f" ≠ C={self.n_classes}"
            )
        if seg_onehot.shape[-2:] != x.shape[-2:] or seg_onehot.shape[0] != x.shape[0]:
            raise RejectedInputError(
                f"DIMENSION_MISMATCH: segmentation {tuple(seg_onehot.shape)} と x {tuple(x.shape)}"
            )
        if attr.dim() != 2 or attr.shape[1] != self.n_attributes or attr.shape[0] != x.shape[0]:
            raise RejectedInputError(
                f"DIMENSION_MISMATCH: attr {tuple(attr.shape)}（(B, N1={self.n_attributes}) が必要）"
            )
        if x.shape[-2] % 4 or x.shape[-1] % 4 or x.shape[-2] != x.shape[-1]:
            raise RejectedInputError(f"DIMENSION_MISMATCH: x {x.shape[-2]}x{x.shape[-1]}（4の倍数の正方形）")

    def bottleneck(self, x, seg_onehot, attr) -> torch.Tensor:
        """dilated 中間層の出力（M1×M1）"""
        self._check_inputs(x, seg_onehot, attr)
        feature = self.encoder(torch.cat([x, seg_onehot.to(x.dtype)], dim=1))
        fused = self.fusion_act(self.fusion(condition_fuse(feature, attr)))
        return self.mid(fused)

    def forward(self, x, seg_onehot, attr) -> torch.Tensor:
        return torch.sigmoid(self.decoder(self.bottleneck(x, seg_onehot, attr)))


def inpaint(g: GeneratorNet, x: torch.Tensor, seg: torch.Tensor, attr: torch.Tensor) -> torch.Tensor:
    """z = G(x, Ws(x), Wa(x))

    Args:
        g: GeneratorNet
        x: 欠損を0で埋めた画像 (3, H, W) または (B, 3, H, W)
        seg: Ws(x) のラベルマップ (H, W) / (B, H, W)
        attr: Wa(x) の確率 (N1,) / (B, N1)

    Returns:
        全画素を生成した z（x と同じ形状、(0,1)）
    """
    single = x.dim() == 3
    if single:
        x, seg, attr = x.unsqueeze(0), seg.unsqueeze(0), attr.unsqueeze(0)
    if seg.shape[-2:] != x.shape[-2:]:
        raise RejectedInputError(
            f"DIMENSION_MISMATCH: segmentation {tuple(seg.shape[-2:])} と x {tuple(x.shape[-2:])}"
        )
    z = g(x, one_hot(seg, g.n_classes).to(x.dtype), attr.to(x.dtype))
    return z[0] if single else z

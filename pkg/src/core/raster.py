"""
Semantic Inpainting Lab - Raster Operations
画像・マスク・属性ベクトル・セグメンテーションマップの共通型と純粋関数

テンソルはチャネル先頭（画像は (..., 3, H, W)、マップは (..., H, W)）で扱う。
PNG入出力の境界でのみ H×W×3 の numpy 配列へ変換する。
"""
from dataclasses import dataclass

import numpy as np
import torch

from ..errors import RejectedInputError

# 画像の高さ・幅はエンコーダの縮小率の倍数
IMAGE_SIDE_MULTIPLE = 4


@dataclass(frozen=True)
class Mask:
    """単一矩形の欠損マスク（1が欠損）

    Attributes:
        top, left: 矩形の左上
        height, width: 矩形の大きさ
        canvas: (H, W)
    """

    top: int
    left: int
    height: int
    width: int
    canvas: tuple

    def __post_init__(self):
        canvas_h, canvas_w = self.canvas
        if self.height < 0 or self.width < 0:
            raise RejectedInputError(f"INVALID_MASK: 負の大きさ {self.height}x{self.width}")
        if (self.top < 0 or self.left < 0
                or self.top + self.height > canvas_h or self.left + self.width > canvas_w):
            raise RejectedInputError(
                f"MASK_OUT_OF_CANVAS: ({self.top}, {self.left}, {self.height}, {self.width}) "
                f"は {canvas_h}x{canvas_w} に収まりません"
            )

    @property
    def bbox(self) -> tuple:
        return (self.top, self.left, self.height, self.width)

    def bits(self) -> torch.Tensor:
        """H×W の {0,1} float32 テンソル"""
        grid = torch.zeros(self.canvas, dtype=torch.float32)
        grid[self.top:self.top + self.height, self.left:self.left + self.width] = 1.0
        return grid

    @classmethod
    def empty(cls, canvas: tuple) -> "Mask":
        return cls(0, 0, 0, 0, tuple(canvas))


def stack_masks(masks) -> torch.Tensor:
    """Mask のリストを (B, 1, H, W) テンソルにまとめる"""
    return torch.stack([m.bits() for m in masks]).unsqueeze(1)


def _mask_tensor(mask) -> torch.Tensor:
    if isinstance(mask, Mask):
        return mask.bits()
    return mask


def _check_same_grid(name: str, image: torch.Tensor, grid: torch.Tensor) -> None:
    if image.shape[-2:] != grid.shape[-2:]:
        raise RejectedInputError(
            f"DIMENSION_MISMATCH: {name} {tuple(grid.shape[-2:])} と画像 {tuple(image.shape[-2:])} の大きさが異なります"
        )


def _broadcast_mask(image: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """(H,W) / (B,H,W) / (B,1,H,W) のマスクを画像に合わせて (…,1,H,W) にする"""
    _check_same_grid("mask", image, mask)
    if mask.dim() == image.dim() - 1:
        mask = mask.unsqueeze(-3)
    elif mask.dim() == 2 and image.dim() == 4:
        mask = mask.unsqueeze(0).unsqueeze(0)
    if mask.dim() != image.dim() or mask.shape[-3] != 1:
        raise RejectedInputError(f"DIMENSION_MISMATCH: mask {tuple(mask.shape)} を画像 {tuple(image.shape)} に合わせられません")
    if mask.shape[0] not in (1, image.shape[0]) and image.dim() == 4:
        raise RejectedInputError(f"DIMENSION_MISMATCH: バッチ数 mask={mask.shape[0]} image={image.shape[0]}")
    return mask.to(image.dtype)


def apply_mask(image: torch.Tensor, mask) -> torch.Tensor:
    """欠損領域を0で埋めた入力画像 x を作る

    Args:
        image: (3, H, W) または (B, 3, H, W)
        mask: Mask または (H, W) / (B, 1, H, W) の {0,1} テンソル

    Returns:
        マスク外は image と同一、マスク内は全チャネル0
    """
    bits = _broadcast_mask(image, _mask_tensor(mask))
    return torch.where(bits > 0.5, torch.zeros_like(image), image)


def composite(restored: torch.Tensor, input_corrupted: torch.Tensor, mask) -> torch.Tensor:
    """マスク内は restored、マスク外は input_corrupted を採る合成画像"""
    if restored.shape != input_corrupted.shape:
        raise RejectedInputError(
            f"DIMENSION_MISMATCH: restored {tuple(restored.shape)} と input {tuple(input_corrupted.shape)}"
        )
    bits = _broadcast_mask(input_corrupted, _mask_tensor(mask))
    return torch.where(bits > 0.5, restored, input_corrupted)


def one_hot(seg: torch.Tensor, num_classes: int) -> torch.Tensor:
    """ラベルマップ (..., H, W) を one-hot (..., C, H, W) の float32 に展開する"""
    if seg.dtype.is_floating_point:
        raise RejectedInputError(f"INVALID_LABELS: 整数ラベルが必要です（dtype={seg.dtype}）")
    if seg.numel() > 0:
        low, high = int(seg.min()), int(seg.max())
        if low < 0 or high >= num_classes:
            raise RejectedInputError(f"LABEL_OUT_OF_RANGE: ラベル範囲 [{low}, {high}] が C={num_classes} を超えています")
    encoded = torch.nn.functional.one_hot(seg.long(), num_classes)
    return encoded.movedim(-1, -3).to(torch.float32)


def spatial_replicate(vector: torch.Tensor, side: int) -> torch.Tensor:
    """属性ベクトル (..., N1) を (..., N1, M, M) へ空間方向に複製する"""
    if side < 1:
        raise RejectedInputError(f"INVALID_SIDE: M={side}（1以上）")
    return vector[..., :, None, None].expand(*vector.shape, side, side).contiguous()


def validate_image(image: torch.Tensor) -> None:
    """Image 型の不変条件（有限・[0,1]・一辺が4の倍数・3チャネル）を検査する"""
    if image.dim() not in (3, 4) or image.shape[-3] != 3:
        raise RejectedInputError(f"INVALID_IMAGE: (…, 3, H, W) が必要です（shape={tuple(image.shape)}）")
    height, width = image.shape[-2:]
    if height % IMAGE_SIDE_MULTIPLE or width % IMAGE_SIDE_MULTIPLE:
        raise RejectedInputError(f"INVALID_IMAGE: {height}x{width} は {IMAGE_SIDE_MULTIPLE} の倍数ではありません")
    if not torch.isfinite(image).all():
        raise RejectedInputError("INVALID_IMAGE: 非有限の画素があります")
    if image.numel() and (image.min() < 0 or image.max() > 1):
        raise RejectedInputError("INVALID_IMAGE: 画素値は [0, 1] の範囲が必要です")


def to_hwc(image: torch.Tensor) -> np.ndarray:
    """(3, H, W) テンソルを H×W×3 の float64 配列に変換する（指標計算・保存用）"""
    return image.detach().cpu().to(torch.float64).permute(1, 2, 0).numpy()


def from_hwc(array: np.ndarray) -> torch.Tensor:
    """H×W×3 の [0,1] 配列を (3, H, W) float32 テンソルに変換する"""
    return torch.from_numpy(np.ascontiguousarray(array, dtype=np.float32)).permute(2, 0, 1).contiguous()


def to_uint8(array: np.ndarray) -> np.ndarray:
    """[0,1] 配列を 8bit に量子化する（v*255 を四捨五入）"""
    return np.clip(np.rint(np.asarray(array) * 255.0), 0, 255).astype(np.uint8)

"""
Semantic Inpainting Lab - Mask Sampling
ランダムな位置・大きさの矩形欠損と、検索評価用の中央欠損
"""
import numpy as np

from ..config import RETRIEVAL_HOLE_FRACTION, mask_side_range
from ..core import Mask
from ..errors import RejectedInputError


def sample_mask(seed: int, canvas: tuple) -> Mask:
    """シードから矩形マスクを1つ引く

    一辺は軸ごとに [ceil(0.3125·side), floor(0.625·side)] から一様に、
    位置はキャンバスに収まる配置から一様に選ぶ。

    Args:
        seed: マスクのシード
        canvas: (H, W)。32以上

    Returns:
        Mask
    """
    height, width = int(canvas[0]), int(canvas[1])
    if height < 32 or width < 32:
        raise RejectedInputError(f"INVALID_CANVAS: {height}x{width}（32x32以上）")
    rng = np.random.default_rng(seed)
    min_h, max_h = mask_side_range(height)
    min_w, max_w = mask_side_range(width)
    hole_h = int(rng.integers(min_h, max_h + 1))
    hole_w = int(rng.integers(min_w, max_w + 1))
    top = int(rng.integers(0, height - hole_h + 1))
    left = int(rng.integers(0, width - hole_w + 1))
    return Mask(top, left, hole_h, hole_w, (height, width))


def center_mask(canvas: tuple, fraction: float = RETRIEVAL_HOLE_FRACTION) -> Mask:
    """中央に一辺 fraction·side の欠損を置く（256pxで128px）"""
    height, width = int(canvas[0]), int(canvas[1])
    hole_h = int(round(height * fraction))
    hole_w = int(round(width * fraction))
    return Mask((height - hole_h) // 2, (width - hole_w) // 2, hole_h, hole_w, (height, width))

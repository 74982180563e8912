"""
Semantic Inpainting Lab - Embedding Networks
属性埋め込みネット Wa（多ラベル分類）とセグメンテーション埋め込みネット Ws（画素分類）
"""
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..config import NUM_ATTRIBUTES, NUM_CLASSES, SEGMENTATION_DILATIONS
from ..errors import RejectedInputError

# predict_* が受け付ける画像の一辺の倍数（Wa のストライド2ブロック4段分）
EMBED_SIDE_MULTIPLE = 16


def _down(in_channels: int, out_channels: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_channels, out_channels, kernel_size=3, stride=2, padding=1),
        nn.ELU(),
    )


class AttributeNet(nn.Module):
    """4段のストライド2畳み込み → 大域平均プーリング → 全結合で N1 個のロジット

    プーリング後の 8c 次元（既定 256）を検索用の特徴として公開する。
    """

    def __init__(self, n_attributes: int = NUM_ATTRIBUTES, channels: int = 32):
        super().__init__()
        self.n_attributes = n_attributes
        widths = [3, channels, channels * 2, channels * 4, channels * 8]
        self.trunk = nn.Sequential(*[_down(widths[i], widths[i + 1]) for i in range(4)])
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.head = nn.Linear(widths[-1], n_attributes)
        self.trained = False

    @property
    def feature_dim(self) -> int:
        return self.head.in_features

    def features(self, x: torch.Tensor) -> torch.Tensor:
        return self.pool(self.trunk(x)).flatten(1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x))


class SegmentationNet(nn.Module):
    """ストライド2で2段縮小 → dilated 3段 → 転置畳み込み2段で元の大きさに戻す"""

    def __init__(self, n_classes: int = NUM_CLASSES, channels: int = 32,
                 dilations=SEGMENTATION_DILATIONS):
        super().__init__()
        self.n_classes = n_classes
        wide = channels * 2
        self.down = nn.Sequential(_down(3, channels), _down(channels, wide))
        self.dilated = nn.Sequential(*[
            nn.Sequential(nn.Conv2d(wide, wide, 3, padding=d, dilation=d), nn.ELU())
            for d in dilations
        ])
        self.up = nn.Sequential(
            nn.ConvTranspose2d(wide, channels, kernel_size=4, stride=2, padding=1),
            nn.ELU(),
            nn.ConvTranspose2d(channels, channels, kernel_size=4, stride=2, padding=1),
            nn.ELU(),
        )
        self.head = nn.Conv2d(channels, n_classes, kernel_size=1)
        self.trained = False

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.up(self.dilated(self.down(x))))


def _as_batch(x: torch.Tensor) -> tuple:
    if x.dim() == 3:
        return x.unsqueeze(0), True
    if x.dim() == 4:
        return x, False
    raise RejectedInputError(f"INVALID_IMAGE: (3, H, W) または (B, 3, H, W) が必要です（shape={tuple(x.shape)}）")


def _check_embed_input(x: torch.Tensor) -> None:
    if x.shape[1] != 3:
        raise RejectedInputError(f"CHANNEL_MISMATCH: 画像は3チャネルが必要です（channels={x.shape[1]}）")
    height, width = x.shape[-2:]
    if height % EMBED_SIDE_MULTIPLE or width % EMBED_SIDE_MULTIPLE:
        raise RejectedInputError(
            f"DIMENSION_MISMATCH: 画像 {height}x{width} は {EMBED_SIDE_MULTIPLE} の倍数ではありません"
        )


@torch.no_grad()
def predict_attributes(net: AttributeNet, x: torch.Tensor) -> torch.Tensor:
    """Wa(x): 属性ごとの確率（しきい値処理はせずそのまま条件付けに使う）

    Args:
        net: AttributeNet
        x: (3, H, W) または (B, 3, H, W)。H, W は16の倍数

    Returns:
        (N1,) または (B, N1) の (0,1) の確率
    """
    batch, single = _as_batch(x)
    _check_embed_input(batch)
    probs = torch.sigmoid(net(batch))
    return probs[0] if single else probs


@torch.no_grad()
def predict_segmentation(net: SegmentationNet, x: torch.Tensor) -> tuple:
    """Ws(x): 画素ごとの argmax ラベルとクラス確率

    Returns:
        (labels (…, H, W) int64, probs (…, C, H, W))
    """
    batch, single = _as_batch(x)
    _check_embed_input(batch)
    probs = F.softmax(net(batch), dim=1)
    labels = probs.argmax(dim=1)
    if single:
        return labels[0], probs[0]
    return labels, probs


@torch.no_grad()
def extract_features(net: AttributeNet, x: torch.Tensor) -> torch.Tensor:
    """検索用の特徴（Wa のプーリング後の活性）"""
    batch, single = _as_batch(x)
    _check_embed_input(batch)
    features = net.features(batch)
    return features[0] if single else features


def freeze(net: nn.Module) -> nn.Module:
    """推論専用に固定する（インペインティング学習中は更新しない）"""
    net.eval()
    for parameter in net.parameters():
        parameter.requires_grad_(False)
    return net

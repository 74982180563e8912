"""
Semantic Inpainting Lab - Loss Functions
識別器の損失（大域・属性・セグメンテーション）とインペインティング損失

識別器の出力はロジットで受け取り、log-sigmoid / softplus で数値的に安定に計算する。
確率 s ∈ (0,1) で考えるときは logit = log(s / (1 - s)) を渡す。
"""
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from ..config import DEFAULT_BETA, DEFAULT_LAMBDA_A, DEFAULT_LAMBDA_S
from ..errors import NumericalError, RejectedInputError


@dataclass(frozen=True)
class LossWeights:
    """損失の重み（β: 再構成と敵対項のトレードオフ、λa・λs: 属性・セグメンテーション項）"""

    beta: float = DEFAULT_BETA
    lambda_a: float = DEFAULT_LAMBDA_A
    lambda_s: float = DEFAULT_LAMBDA_S

    def __post_init__(self):
        for name in ("beta", "lambda_a", "lambda_s"):
            if getattr(self, name) < 0:
                raise RejectedInputError(f"OUT_OF_RANGE: {name} = {getattr(self, name)}（>= 0）")

    @classmethod
    def from_config(cls, config) -> "LossWeights":
        return cls(beta=config.beta, lambda_a=config.lambda_a, lambda_s=config.lambda_s)


def check_finite(name: str, values: torch.Tensor) -> None:
    """非有限値があれば最初のバッチ位置を添えて NumericalError"""
    finite = torch.isfinite(values.detach())
    if finite.all():
        return
    flat = finite.reshape(finite.shape[0], -1).all(dim=1) if finite.dim() > 0 else finite.reshape(1)
    batch_index = int((~flat).nonzero()[0, 0])
    raise NumericalError(f"NON_FINITE: {name} のバッチ位置 {batch_index} に非有限値があります", batch_index=batch_index)


def _check_aligned(*logits: torch.Tensor) -> None:
    shapes = {tuple(t.shape) for t in logits}
    if len(shapes) != 1:
        raise RejectedInputError(f"DIMENSION_MISMATCH: スコアの形状が揃っていません {sorted(shapes)}")


def _real_term(logit: torch.Tensor) -> torch.Tensor:
    """-log σ(l)"""
    return F.softplus(-logit)


def _fake_term(logit: torch.Tensor) -> torch.Tensor:
    """-log(1 - σ(l))"""
    return F.softplus(logit)


def loss_dg(real_logits: torch.Tensor, fake_logits: torch.Tensor) -> torch.Tensor:
    """大域識別器の損失: mean[-log Dg(y) - log(1 - Dg(z))]"""
    _check_aligned(real_logits, fake_logits)
    check_finite("Dg(y)", real_logits)
    check_finite("Dg(z)", fake_logits)
    return (_real_term(real_logits) + _fake_term(fake_logits)).mean()


def _matching_loss(name: str, pos_logits, fake_pair_logits, mismatch_logits, degenerate: bool) -> torch.Tensor:
    _check_aligned(pos_logits, fake_pair_logits, mismatch_logits)
    check_finite(f"{name}(y, W(y))", pos_logits)
    check_finite(f"{name}(z, W(y))", fake_pair_logits)
    per_sample = _real_term(pos_logits) + _fake_term(fake_pair_logits)
    if not degenerate:
        check_finite(f"{name}(y, W̄(y))", mismatch_logits)
        per_sample = per_sample + _fake_term(mismatch_logits)
    return per_sample.mean()


def loss_da(pos_logits, fake_pair_logits, mismatch_logits, degenerate: bool = False) -> torch.Tensor:
    """属性識別器の損失

    mean[-log Da(y,Wa(y)) - log(1 - Da(z,Wa(y))) - log(1 - Da(y,W̄a(y)))]。
    degenerate（不一致ペアが作れないバッチ）のときは第3項を省く。
    """
    return _matching_loss("Da", pos_logits, fake_pair_logits, mismatch_logits, degenerate)


def loss_ds(pos_logits, fake_pair_logits, mismatch_logits, degenerate: bool = False) -> torch.Tensor:
    """セグメンテーション識別器の損失（loss_da と同じ形で Ds / Ws を使う）"""
    return _matching_loss("Ds", pos_logits, fake_pair_logits, mismatch_logits, degenerate)


def loss_d(lg, la, ls, weights: LossWeights):
    """識別器全体の損失: lg + λa·la + λs·ls"""
    return lg + weights.lambda_a * la + weights.lambda_s * ls


def reconstruction_loss(z: torch.Tensor, y: torch.Tensor, squared: bool = False) -> torch.Tensor:
    """サンプルごとの ‖z - y‖₂ のバッチ平均（squared=True なら二乗ノルム）"""
    if z.shape != y.shape:
        raise RejectedInputError(f"DIMENSION_MISMATCH: z {tuple(z.shape)} と y {tuple(y.shape)}")
    diff = (z - y).reshape(z.shape[0], -1)
    squared_norm = (diff * diff).sum(dim=1)
    if squared:
        return squared_norm.mean()
    return torch.linalg.vector_norm(diff, dim=1).mean()


def adversarial_loss(g_logits, a_logits, s_logits, weights: LossWeights) -> torch.Tensor:
    """生成器の敵対項: mean[-(log Dg(z) + λa·log Da(z,Wa(y)) + λs·log Ds(z,Ws(y)))]"""
    _check_aligned(g_logits, a_logits, s_logits)
    check_finite("Dg(z)", g_logits)
    check_finite("Da(z, Wa(y))", a_logits)
    check_finite("Ds(z, Ws(y))", s_logits)
    per_sample = (_real_term(g_logits)
                  + weights.lambda_a * _real_term(a_logits)
                  + weights.lambda_s * _real_term(s_logits))
    return per_sample.mean()


def loss_i(z, y, g_logits, a_logits, s_logits, weights: LossWeights, squared: bool = False) -> torch.Tensor:
    """インペインティング損失: mean‖z - y‖₂ + β·adversarial_loss

    Args:
        z: 復元画像 (B, 3, H, W)
        y: 正解画像 (B, 3, H, W)
        g_logits, a_logits, s_logits: Dg(z), Da(z,Wa(y)), Ds(z,Ws(y)) のロジット (B,)
        weights: LossWeights
        squared: 再構成項を二乗ノルムにする（比較実験用）
    """
    recon = reconstruction_loss(z, y, squared=squared)
    check_finite("‖z - y‖", recon.reshape(1))
    return recon + weights.beta * adversarial_loss(g_logits, a_logits, s_logits, weights)

"""
Semantic Inpainting Lab - Test Helpers
中心差分による勾配検査
"""
import numpy as np
import torch

from src.config import ExperimentConfig

GRAD_EPS = 1e-6
GRAD_RTOL = 1e-3
GRAD_ATOL = 1e-7


def gradient_check(parameters, loss_fn, samples: int = 40, seed: int = 0) -> float:
    """ランダムに選んだパラメータ要素で解析勾配と中心差分を比べ、合格した割合を返す

    Args:
        parameters: float64 のパラメータのリスト
        loss_fn: 引数なしでスカラー損失を返す関数
        samples: 検査する要素数
        seed: 要素選択のシード
    """
    parameters = [p for p in parameters if p.requires_grad]
    for p in parameters:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = [p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p) for p in parameters]

    rng = np.random.default_rng(seed)
    sizes = np.array([p.numel() for p in parameters])
    passed = 0
    for _ in range(samples):
        which = int(rng.choice(len(parameters), p=sizes / sizes.sum()))
        flat_index = int(rng.integers(sizes[which]))
        flat = parameters[which].data.view(-1)
        original = float(flat[flat_index])
        with torch.no_grad():
            flat[flat_index] = original + GRAD_EPS
            plus = float(loss_fn())
            flat[flat_index] = original - GRAD_EPS
            minus = float(loss_fn())
            flat[flat_index] = original
        numeric = (plus - minus) / (2 * GRAD_EPS)
        exact = float(analytic[which].view(-1)[flat_index])
        error = abs(exact - numeric)
        if error <= GRAD_ATOL or error / max(abs(exact), abs(numeric)) <= GRAD_RTOL:
            passed += 1
    return passed / samples


def tiny_config(root, **changes) -> ExperimentConfig:
    """32px・極小チャネル幅の設定（数秒で学習が回る大きさ）"""
    values = dict(
        canvas=32,
        g_channels=2,
        d_channels=2,
        embed_channels=2,
        batch_size=4,
        steps=3,
        checkpoint_every=2,
        log_every=1,
        pretrain_epochs=1,
        pretrain_batch_size=8,
        data_dir=str(root / "data" / "inpaint"),
        attr_data_dir=str(root / "data" / "attribute"),
        seg_data_dir=str(root / "data" / "segmentation"),
        attr_ckpt=str(root / "pretrain" / "attribute.ckpt"),
        seg_ckpt=str(root / "pretrain" / "segmentation.ckpt"),
        out_dir=str(root / "train"),
    )
    values.update(changes)
    return ExperimentConfig(**values)

"""
Semantic Inpainting Lab - Inpainting Trainer
識別器を先に、生成器を後に更新する1ステップと、チェックポイント・損失ログ付きの学習ループ
"""
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import torch
from tqdm import tqdm

from ..config import (
    LOSS_LOG_COLUMNS,
    LOSS_LOG_FILE,
    LOSS_LOG_FINGERPRINT,
    ExperimentConfig,
    derive_seed,
)
from ..core import apply_mask, one_hot, stack_masks
from ..data_loader import load_dataset, verify_dataset
from ..errors import ConfigurationError, NumericalError
from ..logging_utils import get_logger
from ..nets import (
    AttributeDisc,
    AttributeNet,
    GeneratorNet,
    GlobalDisc,
    SegmentationDisc,
    SegmentationNet,
    freeze,
    inpaint,
    predict_attributes,
    predict_segmentation,
    sample_mismatched,
)
from ..synth import sample_mask
from .checkpoint import load_checkpoint, restore_modules, restore_optimizers, save_checkpoint
from .losses import LossWeights, adversarial_loss, loss_d, loss_da, loss_dg, loss_ds, reconstruction_loss

RUNNING_DECAY = 0.9
CHECKPOINT_DIR = "checkpoints"
FINAL_CHECKPOINT = "inpaint.ckpt"

logger = get_logger("train")


@dataclass
class TrainState:
    """学習中の全状態（ネットワーク・オプティマイザ・ステップ・移動平均）"""

    config: ExperimentConfig
    weights: LossWeights
    generator: GeneratorNet
    d_global: GlobalDisc
    d_attr: AttributeDisc
    d_seg: SegmentationDisc
    attr_net: AttributeNet
    seg_net: SegmentationNet
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    seed: int = 0
    step: int = 0
    running: dict = field(default_factory=dict)

    @property
    def discriminators(self) -> tuple:
        return (self.d_global, self.d_attr, self.d_seg)

    def modules(self) -> dict:
        return {
            "generator": self.generator,
            "d_global": self.d_global,
            "d_attr": self.d_attr,
            "d_seg": self.d_seg,
            "attr_net": self.attr_net,
            "seg_net": self.seg_net,
        }

    def optimizers(self) -> dict:
        return {"generator": self.opt_g, "discriminators": self.opt_d}


def build_state(config: ExperimentConfig, attr_net: AttributeNet, seg_net: SegmentationNet) -> TrainState:
    """シードから G と3つの識別器を初期化し、埋め込みネットを固定した TrainState を作る"""
    torch.manual_seed(derive_seed(config.seed, "init", "inpaint"))
    generator = GeneratorNet(config.n_attributes, config.n_classes, channels=config.g_channels)
    d_global = GlobalDisc(config.canvas, channels=config.d_channels)
    d_attr = AttributeDisc(config.canvas, config.n_attributes, channels=config.d_channels)
    d_seg = SegmentationDisc(config.canvas, config.n_classes, channels=config.d_channels)
    betas = (config.adam_beta1, config.adam_beta2)
    opt_g = torch.optim.Adam(generator.parameters(), lr=config.lr_g, betas=betas)
    opt_d = torch.optim.Adam(
        [p for d in (d_global, d_attr, d_seg) for p in d.parameters()], lr=config.lr_d, betas=betas
    )
    return TrainState(
        config=config,
        weights=LossWeights.from_config(config),
        generator=generator,
        d_global=d_global,
        d_attr=d_attr,
        d_seg=d_seg,
        attr_net=freeze(attr_net),
        seg_net=freeze(seg_net),
        opt_g=opt_g,
        opt_d=opt_d,
        seed=config.seed,
    )


def embed(state: TrainState, images: torch.Tensor) -> tuple:
    """Wa・Ws の出力（属性確率と argmax ラベルマップ）"""
    attributes = predict_attributes(state.attr_net, images)
    labels, _ = predict_segmentation(state.seg_net, images)
    return attributes, labels


def _set_requires_grad(modules, flag: bool) -> None:
    for module in modules:
        for parameter in module.parameters():
            parameter.requires_grad_(flag)


def _update_running(state: TrainState, losses: dict) -> None:
    for key, value in losses.items():
        if key not in LOSS_LOG_COLUMNS or key == "step":
            continue
        previous = state.running.get(key)
        state.running[key] = value if previous is None else RUNNING_DECAY * previous + (1 - RUNNING_DECAY) * value


def train_step(state: TrainState, images: torch.Tensor, masks: torch.Tensor) -> dict:
    """1ステップ分の更新（識別器 → 生成器）

    Args:
        state: TrainState（更新される）
        images: 正解画像 y (B, 3, H, W)
        masks: 欠損マスク (B, 1, H, W)

    Returns:
        {"step", "loss_Dg", "loss_Da", "loss_Ds", "loss_D", "loss_I", "recon", "adv", "degenerate"}

    Raises:
        NumericalError: いずれかの損失が非有限（その時点の全成分を添える）
    """
    weights = state.weights
    y = images
    x = apply_mask(y, masks)
    attr_x, labels_x = embed(state, x)
    attr_y, labels_y = embed(state, y)
    seg_y = one_hot(labels_y, state.config.n_classes).to(y.dtype)
    mismatch = sample_mismatched((attr_y > 0.5).to(torch.uint8), derive_seed(state.seed, "mismatch", state.step))
    attr_bar = mismatch.apply(attr_y)
    seg_bar = mismatch.apply(seg_y)

    losses = {"step": state.step + 1}
    z = inpaint(state.generator, x, labels_x, attr_x)

    # 識別器の更新
    _set_requires_grad(state.discriminators, True)
    z_detached = z.detach()
    try:
        lg = loss_dg(state.d_global(y), state.d_global(z_detached))
        losses["loss_Dg"] = float(lg.detach())
        la = loss_da(state.d_attr(y, attr_y), state.d_attr(z_detached, attr_y),
                     state.d_attr(y, attr_bar), degenerate=mismatch.degenerate)
        losses["loss_Da"] = float(la.detach())
        ls = loss_ds(state.d_seg(y, seg_y), state.d_seg(z_detached, seg_y),
                     state.d_seg(y, seg_bar), degenerate=mismatch.degenerate)
        losses["loss_Ds"] = float(ls.detach())
        ld = loss_d(lg, la, ls, weights)
        losses["loss_D"] = float(ld.detach())
    except NumericalError as e:
        raise NumericalError(f"{e}（ステップ {state.step + 1} を中断）", batch_index=e.batch_index, losses=losses)
    if not np.isfinite(losses["loss_D"]):
        raise NumericalError(f"NON_FINITE: loss_D（ステップ {state.step + 1} を中断）", losses=losses)
    state.opt_d.zero_grad()
    ld.backward()
    state.opt_d.step()

    # 生成器の更新（更新後の識別器でスコアを計算し直す）
    _set_requires_grad(state.discriminators, False)
    try:
        recon = reconstruction_loss(z, y, squared=state.config.squared_recon)
        losses["recon"] = float(recon.detach())
        adv = adversarial_loss(state.d_global(z), state.d_attr(z, attr_y), state.d_seg(z, seg_y), weights)
        losses["adv"] = float(adv.detach())
        li = recon + weights.beta * adv
        losses["loss_I"] = float(li.detach())
    except NumericalError as e:
        raise NumericalError(f"{e}（ステップ {state.step + 1} を中断）", batch_index=e.batch_index, losses=losses)
    if not np.isfinite(losses["loss_I"]):
        raise NumericalError(f"NON_FINITE: loss_I（ステップ {state.step + 1} を中断）", losses=losses)
    state.opt_g.zero_grad()
    li.backward()
    state.opt_g.step()
    _set_requires_grad(state.discriminators, True)

    state.step += 1
    _update_running(state, losses)
    losses["degenerate"] = mismatch.degenerate
    return losses


def batch_for_step(images: torch.Tensor, config: ExperimentConfig, step: int) -> tuple:
    """ステップ番号から決まるバッチ（サンプル番号とマスク）を返す。再開しても同じ系列になる"""
    size = images.shape[0]
    rng = np.random.default_rng(derive_seed(config.seed, "batch", step))
    index = rng.choice(size, size=config.batch_size, replace=size < config.batch_size)
    canvas = tuple(images.shape[-2:])
    masks = [sample_mask(derive_seed(config.seed, "mask", step, row), canvas) for row in range(len(index))]
    return images[torch.as_tensor(index, dtype=torch.long)], stack_masks(masks)


def load_embedding_nets(config: ExperimentConfig) -> tuple:
    """事前学習済みの Wa・Ws を読み込む（未学習なら ConfigurationError）"""
    attr_data = load_checkpoint(config.attr_ckpt, expected=config, kind="attribute")
    seg_data = load_checkpoint(config.seg_ckpt, expected=config, kind="segmentation")
    attr_net = AttributeNet(config.n_attributes, channels=config.embed_channels)
    seg_net = SegmentationNet(config.n_classes, channels=config.embed_channels)
    restore_modules(attr_data, {"attr_net": attr_net})
    restore_modules(seg_data, {"seg_net": seg_net})
    for name, net in (("attr_ckpt", attr_net), ("seg_ckpt", seg_net)):
        if not net.trained:
            raise ConfigurationError(f"UNTRAINED_COMPONENT: {name} は学習済みではありません")
    return attr_net, seg_net


def save_train_state(state: TrainState, path) -> Path:
    return save_checkpoint(
        path,
        state.modules(),
        state.config,
        kind="inpaint",
        step=state.step,
        seed=state.seed,
        optimizers=state.optimizers(),
        trained=state.step > 0,
        running=state.running,
    )


def load_train_state(path, config: ExperimentConfig = None) -> TrainState:
    """inpaint チェックポイントから TrainState を復元する（config 省略時は保存時の設定）"""
    data = load_checkpoint(path, expected=config, kind="inpaint")
    config = config or data.config()
    attr_net = AttributeNet(config.n_attributes, channels=config.embed_channels)
    seg_net = SegmentationNet(config.n_classes, channels=config.embed_channels)
    state = build_state(config, attr_net, seg_net)
    modules = state.modules()
    restore_modules(data, modules)
    restore_optimizers(data, state.optimizers())
    # 埋め込みネットは事前学習済みのものだけが学習に使われる
    attr_net.trained = seg_net.trained = True
    freeze(attr_net)
    freeze(seg_net)
    state.step = data.step
    state.seed = data.seed
    state.running = data.running
    return state


def _check_prerequisites(config: ExperimentConfig, resume) -> None:
    missing = []
    _, verification_log = verify_dataset(config.data_dir)
    if not verification_log["success"]:
        missing.append(f"data_dir={config.data_dir} ({'; '.join(verification_log['errors'])})")
    for key in ("attr_ckpt", "seg_ckpt"):
        if not Path(getattr(config, key)).exists():
            missing.append(f"{key}={getattr(config, key)}")
    if resume is not None and not Path(resume).exists():
        missing.append(f"resume={resume}")
    if missing:
        raise ConfigurationError("MISSING_PREREQUISITE: " + ", ".join(missing))


def _write_loss_log(path: Path, rows: list, fingerprint: str, previous: pd.DataFrame = None) -> None:
    # 指紋はその行を出した実行の設定のもの
    frame = pd.DataFrame(rows, columns=LOSS_LOG_COLUMNS)
    frame[LOSS_LOG_FINGERPRINT] = fingerprint
    if previous is not None and not previous.empty:
        frame = pd.concat([previous, frame], ignore_index=True)
    frame.to_csv(path, index=False, float_format="%.8g")


def train(config: ExperimentConfig, resume=None, progress: bool = True) -> dict:
    """インペインティングの学習ループ

    Args:
        config: 実行設定（data_dir・attr_ckpt・seg_ckpt・out_dir・steps など）
        resume: 途中から再開する inpaint チェックポイント
        progress: tqdm の進捗表示

    Returns:
        {"checkpoint", "loss_log", "steps", "final_losses", "running", "fingerprint"}
    """
    _check_prerequisites(config, resume)
    attr_net, seg_net = load_embedding_nets(config)
    dataset = load_dataset(config.data_dir, split="train")
    if len(dataset) == 0:
        raise ConfigurationError(f"EMPTY_DATASET: {config.data_dir} に train サンプルがありません")
    if dataset.images.shape[-1] != config.canvas or dataset.images.shape[-2] != config.canvas:
        raise ConfigurationError(
            f"CANVAS_MISMATCH: データ {tuple(dataset.images.shape[-2:])} ≠ canvas={config.canvas}"
        )

    out_dir = Path(config.out_dir)
    (out_dir / CHECKPOINT_DIR).mkdir(parents=True, exist_ok=True)
    log_path = out_dir / LOSS_LOG_FILE
    previous = None
    if resume is not None:
        state = load_train_state(resume, config)
        if log_path.exists():
            previous = pd.read_csv(log_path, dtype={LOSS_LOG_FINGERPRINT: str})
            previous = previous[previous["step"] <= state.step]
        logger.info("resumed from %s at step %d", resume, state.step)
    else:
        state = build_state(config, attr_net, seg_net)

    rows = []
    losses = {}
    for _ in tqdm(range(state.step, config.steps), desc="train", disable=not progress):
        images, masks = batch_for_step(dataset.images, config, state.step)
        try:
            losses = train_step(state, images, masks)
        except NumericalError as e:
            _write_loss_log(log_path, rows, config.fingerprint(), previous)
            logger.error("step %d: %s losses=%s", state.step + 1, e, e.losses)
            raise
        rows.append({key: losses[key] for key in LOSS_LOG_COLUMNS})
        if state.step % config.log_every == 0:
            logger.info(
                "step %d loss_D=%.4f loss_I=%.4f recon=%.4f adv=%.4f",
                state.step, losses["loss_D"], losses["loss_I"], losses["recon"], losses["adv"],
            )
        if state.step % config.checkpoint_every == 0:
            save_train_state(state, out_dir / CHECKPOINT_DIR / f"step_{state.step:06d}.ckpt")
            _write_loss_log(log_path, rows, config.fingerprint(), previous)

    final_path = save_train_state(state, out_dir / FINAL_CHECKPOINT)
    _write_loss_log(log_path, rows, config.fingerprint(), previous)
    logger.info("finished %d steps -> %s", state.step, final_path)
    return {
        "checkpoint": str(final_path),
        "loss_log": str(log_path),
        "steps": state.step,
        "final_losses": {key: losses[key] for key in LOSS_LOG_COLUMNS} if losses else {},
        "running": dict(state.running),
        "fingerprint": config.fingerprint(),
    }

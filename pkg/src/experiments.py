"""
Semantic Inpainting Lab - Experiments
学習済みモデルの評価と比較実験（λa・λs のアブレーション）の集計

評価は全て固定シードの欠損で行う。比較実験の各点は出力ディレクトリで分離し、
失敗した点は表に欠損値として残す（表全体の出力は止めない）。
"""
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
import torch
from PIL import Image

from .config import ExperimentConfig, derive_seed
from .core import apply_mask, composite, stack_masks, to_uint8
from .data_loader import load_dataset
from .errors import ConfigurationError, InpaintLabError, RejectedInputError
from .logging_utils import get_logger
from .metrics import metric_report
from .nets import (
    AttributeNet,
    GeneratorNet,
    SegmentationNet,
    freeze,
    inpaint,
    predict_attributes,
    predict_segmentation,
)
from .synth import sample_mask
from .training import load_checkpoint, restore_modules, train

EVAL_BATCH_SIZE = 32
GRID_SAMPLES = 4

# 比較実験の λ の値と4つの掃引（λa=0, λs=0, λa=0.1, λs=0.1 を固定した列）
ABLATION_VALUES = (0.0, 0.01, 0.1, 1.0)
ABLATION_SWEEPS = (
    ("lambda_a=0", "lambda_a", 0.0),
    ("lambda_s=0", "lambda_s", 0.0),
    ("lambda_a=0.1", "lambda_a", 0.1),
    ("lambda_s=0.1", "lambda_s", 0.1),
)
BASELINE_LABEL = "no-regularization"

logger = get_logger("experiments")


class Inpainter:
    """G・Wa・Ws をまとめた復元器。inpainter(x, masks) で復元画像を返す"""

    def __init__(self, generator: GeneratorNet, attr_net: AttributeNet, seg_net: SegmentationNet,
                 config: ExperimentConfig, step: int = 0, composite_output: bool = False):
        self.generator = generator.eval()
        self.attr_net = freeze(attr_net)
        self.seg_net = freeze(seg_net)
        self.config = config
        self.step = step
        self.composite_output = composite_output

    @property
    def trained(self) -> bool:
        return self.step > 0 and self.attr_net.trained and self.seg_net.trained

    @property
    def variant(self) -> str:
        return "composited" if self.composite_output else "raw"

    @torch.no_grad()
    def restore(self, x: torch.Tensor, masks: torch.Tensor) -> tuple:
        """(生の出力 z, 欠損内だけ z を使った合成画像)"""
        attributes = predict_attributes(self.attr_net, x)
        labels, _ = predict_segmentation(self.seg_net, x)
        z = inpaint(self.generator, x, labels, attributes)
        return z, composite(z, x, masks)

    def __call__(self, x: torch.Tensor, masks: torch.Tensor) -> torch.Tensor:
        z, composited = self.restore(x, masks)
        return composited if self.composite_output else z


def load_inpainter(path, composite_output: bool = False) -> Inpainter:
    """inpaint チェックポイントから復元器を作る"""
    data = load_checkpoint(path, kind="inpaint")
    config = data.config()
    generator = GeneratorNet(config.n_attributes, config.n_classes, channels=config.g_channels)
    attr_net = AttributeNet(config.n_attributes, channels=config.embed_channels)
    seg_net = SegmentationNet(config.n_classes, channels=config.embed_channels)
    restore_modules(data, {"generator": generator, "attr_net": attr_net, "seg_net": seg_net})
    attr_net.trained = seg_net.trained = True
    return Inpainter(generator, attr_net, seg_net, config, step=data.step, composite_output=composite_output)


def eval_masks(seed: int, count: int, canvas: tuple) -> torch.Tensor:
    """評価用の固定マスク (count, 1, H, W)"""
    return stack_masks([sample_mask(derive_seed(seed, "eval-mask", i), canvas) for i in range(count)])


@torch.no_grad()
def attribute_consistency(images: torch.Tensor, attributes: torch.Tensor, attr_net: AttributeNet) -> float:
    """Wa(z) > 0.5 が y の正解属性と一致する割合（属性とサンプルで平均）

    Args:
        images: 評価する画像（通常は合成画像） (B, 3, H, W)
        attributes: y の正解属性 (B, N1)
        attr_net: 学習済み AttributeNet
    """
    if not attr_net.trained:
        raise ConfigurationError("UNTRAINED_COMPONENT: attr_net が学習済みではありません")
    if images.shape[0] != attributes.shape[0]:
        raise RejectedInputError(f"DIMENSION_MISMATCH: 画像 {images.shape[0]} 枚と属性 {attributes.shape[0]} 件")
    if images.shape[0] == 0:
        raise RejectedInputError("EMPTY_DATASET: 評価画像がありません")
    attr_net.eval()
    matches = 0.0
    for start in range(0, images.shape[0], EVAL_BATCH_SIZE):
        predicted = predict_attributes(attr_net, images[start:start + EVAL_BATCH_SIZE]) > 0.5
        truth = attributes[start:start + EVAL_BATCH_SIZE] > 0.5
        matches += float((predicted == truth).to(torch.float64).sum())
    return matches / attributes.numel()


def _aggregate(frame: pd.DataFrame) -> dict:
    summary = {}
    for variant, part in frame.groupby("variant", sort=False):
        finite_psnr = part["psnr"][np.isfinite(part["psnr"])]
        summary[variant] = {
            "mean_l1": float(part["mean_l1"].mean()),
            "mean_l2": float(part["mean_l2"].mean()),
            "psnr": float(finite_psnr.mean()) if len(finite_psnr) else math.inf,
            "psnr_inf_count": int((~np.isfinite(part["psnr"])).sum()),
            "ssim": float(part["ssim"].mean()),
            "hole_l1": float(part["hole_l1"].mean()),
            "hole_l2": float(part["hole_l2"].mean()),
        }
    return summary


def evaluate_pixel(inpainter: Inpainter, dataset, seed: int = 0) -> dict:
    """データセット全体で raw・composited・masked の画素指標を計算する

    Returns:
        {"rows": 1枚1変種ごとの DataFrame, "summary": 変種ごとの平均, "attribute_consistency": float}
    """
    if len(dataset) == 0:
        raise RejectedInputError("EMPTY_DATASET: 評価データがありません")
    canvas = tuple(dataset.images.shape[-2:])
    masks = eval_masks(seed, len(dataset), canvas)
    rows = []
    composited_all = []
    for start in range(0, len(dataset), EVAL_BATCH_SIZE):
        y = dataset.images[start:start + EVAL_BATCH_SIZE]
        batch_masks = masks[start:start + EVAL_BATCH_SIZE]
        x = apply_mask(y, batch_masks)
        z, composited = inpainter.restore(x, batch_masks)
        composited_all.append(composited)
        for row in range(y.shape[0]):
            index = start + row
            mask_bits = batch_masks[row, 0].numpy()
            for variant, image in (("raw", z[row]), ("composited", composited[row]), ("masked", x[row])):
                report = metric_report(image, y[row], mask=mask_bits, variant=variant)
                rows.append({"id": dataset.ids[index], **report.__dict__})
    frame = pd.DataFrame(rows)
    consistency = attribute_consistency(torch.cat(composited_all), dataset.attributes, inpainter.attr_net)
    return {"rows": frame, "summary": _aggregate(frame), "attribute_consistency": consistency}


def save_grid(path, columns) -> Path:
    """画像の列を横に並べた比較画像を保存する

    Args:
        path: 出力PNG
        columns: [(B, 3, H, W) テンソル, ...]。行がサンプル、列が各画像
    """
    rows = []
    for i in range(columns[0].shape[0]):
        rows.append(np.concatenate([c[i].detach().cpu().permute(1, 2, 0).numpy() for c in columns], axis=1))
    grid = np.concatenate(rows, axis=0)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(grid)).save(path)
    return path


def write_report(path, payload: dict) -> Path:
    """JSONレポートを書く（キーはソート、+inf は "inf"）"""
    def _default(value):
        if isinstance(value, (np.floating, np.integer)):
            return value.item()
        raise TypeError(f"JSONに変換できません: {type(value)}")

    def _clean(value):
        if isinstance(value, float) and math.isinf(value):
            return "inf" if value > 0 else "-inf"
        if isinstance(value, float) and math.isnan(value):
            return None
        if isinstance(value, dict):
            return {k: _clean(v) for k, v in value.items()}
        if isinstance(value, (list, tuple)):
            return [_clean(v) for v in value]
        return value

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(payload), indent=2, sort_keys=True, default=_default), encoding="utf-8")
    return path


def ablation_points(values=ABLATION_VALUES, sweeps=ABLATION_SWEEPS) -> list:
    """4つの掃引に現れる (λa, λs) の組を重複なしで返す"""
    points = []
    for _, fixed_key, fixed_value in sweeps:
        for value in values:
            point = (fixed_value, value) if fixed_key == "lambda_a" else (value, fixed_value)
            if point not in points:
                points.append(point)
    return points


def point_label(lambda_a: float, lambda_s: float) -> str:
    if lambda_a == 0 and lambda_s == 0:
        return BASELINE_LABEL
    return f"la={lambda_a:g}_ls={lambda_s:g}"


@dataclass
class AblationResult:
    """比較実験の結果（long: 1実行1行、table: 掃引×λ の中央値表）"""

    long: pd.DataFrame
    table: pd.DataFrame
    paths: dict


def _run_point(config: ExperimentConfig, lambda_a: float, lambda_s: float, seed: int,
               out_dir: Path, test_set, train_fn) -> dict:
    label = point_label(lambda_a, lambda_s)
    run_dir = out_dir / label / f"seed_{seed}"
    row = {"label": label, "lambda_a": lambda_a, "lambda_s": lambda_s, "seed": seed,
           "psnr": math.nan, "ssim": math.nan, "attribute_consistency": math.nan,
           "status": "ok", "error": "", "fingerprint": ""}
    try:
        cell_config = config.replace(lambda_a=lambda_a, lambda_s=lambda_s, seed=seed, out_dir=str(run_dir))
        row["fingerprint"] = cell_config.fingerprint()
        result = train_fn(cell_config, progress=False)
        inpainter = load_inpainter(result["checkpoint"])
        evaluation = evaluate_pixel(inpainter, test_set, seed=config.seed)
        summary = evaluation["summary"]["composited"]
        row.update({"psnr": summary["psnr"], "ssim": summary["ssim"],
                    "attribute_consistency": evaluation["attribute_consistency"]})
        count = min(GRID_SAMPLES, len(test_set))
        y = test_set.images[:count]
        masks = eval_masks(config.seed, count, tuple(y.shape[-2:]))
        x = apply_mask(y, masks)
        z, composited = inpainter.restore(x, masks)
        save_grid(run_dir / "samples.png", [x, z, composited, y])
    except Exception as e:
        error = str(e) if isinstance(e, InpaintLabError) else f"{type(e).__name__}: {e}"
        row.update({"status": "failed", "error": error})
        logger.warning("%s seed=%d failed: %s", label, seed, e)
    return row


def ablation_table(long: pd.DataFrame, sweeps=ABLATION_SWEEPS) -> pd.DataFrame:
    """掃引ごとに λ を列にした PSNR・SSIM の表（シード間の中央値）"""
    records = []
    for sweep, fixed_key, fixed_value in sweeps:
        swept_key = "lambda_s" if fixed_key == "lambda_a" else "lambda_a"
        part = long[long[fixed_key] == fixed_value]
        for _, row in part.iterrows():
            records.append({"sweep": sweep, "lambda": row[swept_key], "psnr": row["psnr"],
                            "ssim": row["ssim"], "attribute_consistency": row["attribute_consistency"]})
    if not records:
        return pd.DataFrame()
    frame = pd.DataFrame(records)
    return frame.pivot_table(index="sweep", columns="lambda",
                             values=["psnr", "ssim", "attribute_consistency"],
                             aggfunc="median", dropna=False)


def run_ablation(config: ExperimentConfig, out_dir, points=None, seeds=None, train_fn=train) -> AblationResult:
    """λa・λs の比較実験

    Args:
        config: 基準の設定（データ・事前学習チェックポイント・学習ステップ）
        out_dir: 出力ディレクトリ（点・シードごとにサブディレクトリを作る）
        points: (λa, λs) のリスト（None なら4つの掃引の全点）
        seeds: シードのリスト（None なら config.ablation_seeds 個）
        train_fn: 学習関数（既定は train）

    Returns:
        AblationResult（CSV・JSON の出力先も含む）
    """
    out_dir = Path(out_dir)
    points = list(points) if points is not None else ablation_points()
    seeds = list(seeds) if seeds is not None else [config.seed + i for i in range(config.ablation_seeds)]
    test_set = load_dataset(config.data_dir, split="test")
    if len(test_set) == 0:
        raise ConfigurationError(f"EMPTY_DATASET: {config.data_dir} に test サンプルがありません")

    rows = []
    for lambda_a, lambda_s in points:
        for seed in seeds:
            logger.info("ablation %s seed=%d", point_label(lambda_a, lambda_s), seed)
            rows.append(_run_point(config, lambda_a, lambda_s, seed, out_dir, test_set, train_fn))

    long = pd.DataFrame(rows)
    table = ablation_table(long)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "long": out_dir / "ablation_long.csv",
        "table": out_dir / "ablation_table.csv",
        "table_meta": out_dir / "ablation_table.json",
        "json": out_dir / "ablation.json",
    }
    long.to_csv(paths["long"], index=False)
    table.to_csv(paths["table"])
    write_report(paths["table_meta"], {
        "fingerprint": config.fingerprint(),
        "statistic": "median",
        "source": paths["long"].name,
        "run_fingerprints": long.groupby("label", sort=False)["fingerprint"].apply(list).to_dict(),
    })
    write_report(paths["json"], {
        "fingerprint": config.fingerprint(),
        "points": [list(p) for p in points],
        "seeds": seeds,
        "runs": long.to_dict(orient="records"),
        "median": long.groupby("label", sort=False)[["psnr", "ssim", "attribute_consistency"]]
                      .median().to_dict(orient="index"),
    })
    return AblationResult(long=long, table=table, paths={k: str(v) for k, v in paths.items()})

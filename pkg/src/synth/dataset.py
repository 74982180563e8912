"""
Semantic Inpainting Lab - Dataset Builder
LabeledSample を n 件生成し、PNG・PGM・manifest.jsonl としてディスクに保存する
"""
import json
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import pandas as pd
from PIL import Image
from tqdm import tqdm

from ..config import (
    DATASET_META_FILE,
    IMAGES_DIR,
    MANIFEST_FILE,
    SEGS_DIR,
    sample_seed,
    split_sizes,
)
from ..core import to_uint8
from ..errors import RejectedInputError
from ..logging_utils import get_logger
from .scene import ATTRIBUTE_NAMES, CLASS_NAMES, check_canvas, generate_scene

logger = get_logger("build_dataset")


def sample_id(index: int) -> str:
    return f"{index:06d}"


def split_labels(n: int) -> list:
    """サンプル番号順に train → val → test を割り当てる"""
    labels = []
    for name, count in split_sizes(n).items():
        labels.extend([name] * count)
    return labels


def save_image_png(image, path) -> None:
    """(3, H, W) の [0,1] テンソルを8bit PNGで保存する"""
    array = image.detach().cpu().permute(1, 2, 0).numpy()
    Image.fromarray(to_uint8(array)).save(path)


def save_segmentation_pgm(segmentation, path) -> None:
    """ラベルマップを1画素1バイトのPGM（P5）で保存する"""
    labels = np.asarray(segmentation, dtype=np.int64)
    if labels.min() < 0 or labels.max() > 255:
        raise RejectedInputError("LABEL_OUT_OF_RANGE: PGMには0〜255のラベルしか保存できません")
    Image.fromarray(labels.astype(np.uint8)).save(path, format="PPM")


def _generate_and_save(args):
    index, seed, canvas, out_dir = args
    sample = generate_scene(seed, canvas)
    identifier = sample_id(index)
    save_image_png(sample.image, out_dir / IMAGES_DIR / f"{identifier}.png")
    save_segmentation_pgm(sample.segmentation.numpy(), out_dir / SEGS_DIR / f"{identifier}.pgm")
    return [int(v) for v in sample.attributes.tolist()], len(sample.spec.objects)


def build_dataset(n: int, seed: int, canvas: tuple, out_dir, purpose: str = "inpaint",
                  workers: int = 1, progress: bool = True) -> dict:
    """合成データセットを生成して保存する

    Args:
        n: サンプル数（1以上）
        seed: データセットのシード
        canvas: (H, W)
        out_dir: 出力ディレクトリ（images/, segs/, manifest.jsonl を作る）
        purpose: "inpaint"（d0）/ "attribute"（d1）/ "segmentation"（d2）。用途ごとにシード範囲が重ならない
        workers: 並列プロセス数（結果は実行順に依存しない）
        progress: tqdm の進捗表示

    Returns:
        {"n", "splits", "manifest", "attribute_rates"}
    """
    if n < 1:
        raise RejectedInputError(f"INVALID_COUNT: n={n}（1以上）")
    height, width = check_canvas(canvas)
    out_dir = Path(out_dir)
    (out_dir / IMAGES_DIR).mkdir(parents=True, exist_ok=True)
    (out_dir / SEGS_DIR).mkdir(parents=True, exist_ok=True)

    seeds = [sample_seed(purpose, seed, index) for index in range(n)]
    jobs = [(index, seeds[index], (height, width), out_dir) for index in range(n)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(tqdm(pool.map(_generate_and_save, jobs, chunksize=64),
                                total=n, desc="gen-data", disable=not progress))
    else:
        results = [_generate_and_save(job) for job in tqdm(jobs, desc="gen-data", disable=not progress)]

    splits = split_labels(n)
    manifest = pd.DataFrame({
        "id": [sample_id(index) for index in range(n)],
        "seed": seeds,
        "split": splits,
        "num_objects": [count for _, count in results],
        "attributes": [bits for bits, _ in results],
    })
    manifest_path = out_dir / MANIFEST_FILE
    manifest.to_json(manifest_path, orient="records", lines=True)

    meta = {
        "n": n,
        "seed": seed,
        "purpose": purpose,
        "canvas": [height, width],
        "attribute_names": list(ATTRIBUTE_NAMES),
        "class_names": list(CLASS_NAMES),
    }
    (out_dir / DATASET_META_FILE).write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")

    rates = np.asarray(manifest["attributes"].tolist(), dtype=np.float64).mean(axis=0)
    attribute_rates = {name: float(rate) for name, rate in zip(ATTRIBUTE_NAMES, rates)}
    logger.info("%d samples -> %s (%s)", n, out_dir, split_sizes(n))
    return {
        "n": n,
        "splits": split_sizes(n),
        "manifest": str(manifest_path),
        "attribute_rates": attribute_rates,
    }

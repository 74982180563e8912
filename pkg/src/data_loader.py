"""
Semantic Inpainting Lab - Data Loader
データセットディレクトリの読み込みと検証
"""
import json
import os
from dataclasses import dataclass
from typing import Tuple

import numpy as np
import pandas as pd
import torch
from PIL import Image

from .config import DATASET_META_FILE, IMAGES_DIR, MANIFEST_FILE, SEGS_DIR
from .errors import ConfigurationError

REQUIRED_MANIFEST_COLUMNS = ["id", "split", "attributes"]


@dataclass
class LabeledDataset:
    """メモリ上のデータセット

    Attributes:
        ids: サンプルID（manifest順）
        images: (N, 3, H, W) float32
        attributes: (N, N1) float32
        segmentations: (N, H, W) int64
        splits: 各サンプルの split 名
        meta: dataset.json の内容
    """

    ids: list
    images: torch.Tensor
    attributes: torch.Tensor
    segmentations: torch.Tensor
    splits: list
    meta: dict

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, split: str) -> "LabeledDataset":
        """指定 split だけを取り出す"""
        index = [i for i, name in enumerate(self.splits) if name == split]
        return self.take(index)

    def take(self, index) -> "LabeledDataset":
        index_tensor = torch.as_tensor(list(index), dtype=torch.long)
        return LabeledDataset(
            ids=[self.ids[i] for i in index],
            images=self.images[index_tensor],
            attributes=self.attributes[index_tensor],
            segmentations=self.segmentations[index_tensor],
            splits=[self.splits[i] for i in index],
            meta=dict(self.meta),
        )


def load_image_png(path) -> torch.Tensor:
    """8bit PNG を (3, H, W) の [0,1] float32 に読み込む（v/255）"""
    with Image.open(path) as image:
        array = np.asarray(image.convert("RGB"), dtype=np.uint8)
    return torch.from_numpy(array.astype(np.float32) / 255.0).permute(2, 0, 1).contiguous()


def load_segmentation_pgm(path) -> torch.Tensor:
    with Image.open(path) as image:
        array = np.asarray(image, dtype=np.uint8)
    return torch.from_numpy(array.astype(np.int64))


def verify_dataset(data_dir) -> Tuple[pd.DataFrame, dict]:
    """manifest と画像ファイルの存在を検証し、検証ログを返す

    Returns:
        Tuple[manifest, verification_log]
        verification_log = {"success": bool, "errors": [...], "warnings": [...]}
    """
    verification_log = {
        "success": False,
        "errors": [],
        "warnings": []
    }
    manifest_path = os.path.join(data_dir, MANIFEST_FILE)
    if not os.path.exists(manifest_path):
        verification_log["errors"].append(f"manifestが見つかりません: {manifest_path}")
        return None, verification_log

    try:
        manifest = pd.read_json(manifest_path, orient="records", lines=True, dtype={"id": str})
    except ValueError as e:
        verification_log["errors"].append(f"manifest読み込みエラー: {e}")
        return None, verification_log

    if manifest.empty:
        verification_log["errors"].append(f"manifestにサンプルがありません: {manifest_path}")
        return None, verification_log

    missing_cols = [col for col in REQUIRED_MANIFEST_COLUMNS if col not in manifest.columns]
    if missing_cols:
        verification_log["errors"].append(f"manifestに必須カラムがありません: {missing_cols}")
        return None, verification_log

    missing_files = []
    for identifier in manifest["id"]:
        for sub, ext in ((IMAGES_DIR, "png"), (SEGS_DIR, "pgm")):
            path = os.path.join(data_dir, sub, f"{identifier}.{ext}")
            if not os.path.exists(path):
                missing_files.append(path)
    if missing_files:
        verification_log["errors"].append(
            f"ファイルが {len(missing_files)} 件見つかりません（例: {missing_files[0]}）"
        )
        return None, verification_log

    if not os.path.exists(os.path.join(data_dir, DATASET_META_FILE)):
        verification_log["warnings"].append("dataset.json がありません（メタ情報なしで読み込みます）")

    verification_log["success"] = True
    return manifest, verification_log


def load_dataset(data_dir, split: str = None) -> LabeledDataset:
    """データセットディレクトリを読み込む

    Args:
        data_dir: build_dataset の出力ディレクトリ
        split: "train" / "val" / "test"（None なら全件）

    Returns:
        LabeledDataset
    """
    manifest, verification_log = verify_dataset(data_dir)
    if not verification_log["success"]:
        raise ConfigurationError("DATASET_INVALID: " + " / ".join(verification_log["errors"]))

    if split is not None:
        manifest = manifest[manifest["split"] == split].reset_index(drop=True)

    ids = [str(identifier) for identifier in manifest["id"]]
    if ids:
        images = torch.stack([load_image_png(os.path.join(data_dir, IMAGES_DIR, f"{i}.png")) for i in ids])
        segmentations = torch.stack([load_segmentation_pgm(os.path.join(data_dir, SEGS_DIR, f"{i}.pgm")) for i in ids])
        attributes = torch.tensor(manifest["attributes"].tolist(), dtype=torch.float32)
    else:
        images = torch.zeros((0, 3, 0, 0))
        segmentations = torch.zeros((0, 0, 0), dtype=torch.long)
        attributes = torch.zeros((0, 0))

    meta_path = os.path.join(data_dir, DATASET_META_FILE)
    meta = {}
    if os.path.exists(meta_path):
        with open(meta_path, encoding="utf-8") as f:
            meta = json.load(f)

    return LabeledDataset(
        ids=ids,
        images=images,
        attributes=attributes,
        segmentations=segmentations,
        splits=list(manifest["split"]),
        meta=meta,
    )

"""
Semantic Inpainting Lab - Checkpoint Container
名前付きパラメータブロックを持つ単一ファイルのチェックポイント

レイアウト:
    magic b"SIGCKPT\\0" | ヘッダ長 (uint64, little-endian) | JSON ヘッダ | float32 (little-endian) のブロック列

ヘッダには版数・種別・設定の指紋・ステップ・シード・ブロック表（名前・形状・オフセット・要素数）を持つ。
読み込みは全項目を検証してから状態を組み立てる（途中まで読んだ状態は返さない）。
"""
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..config import CHECKPOINT_FORMAT_VERSION, EMBEDDING_KEYS, MODEL_KEYS, ExperimentConfig
from ..errors import CheckpointError, IncompatibleCheckpointError
from ..logging_utils import get_logger

MAGIC = b"SIGCKPT\0"
_LENGTH = struct.Struct("<Q")
_DTYPE = np.dtype("<f4")

EMBEDDING_KINDS = ("attribute", "segmentation")

logger = get_logger("checkpoint")


def compatibility_keys(kind: str) -> tuple:
    """種別ごとの互換判定キー（Wa・Ws は canvas と G・D の幅に依存しない）"""
    return EMBEDDING_KEYS if kind in EMBEDDING_KINDS else MODEL_KEYS


@dataclass
class CheckpointData:
    """検証済みのチェックポイント内容"""

    header: dict
    tensors: dict = field(default_factory=dict)

    @property
    def kind(self) -> str:
        return self.header["kind"]

    @property
    def step(self) -> int:
        return int(self.header["step"])

    @property
    def seed(self) -> int:
        return int(self.header["seed"])

    @property
    def trained(self) -> bool:
        return bool(self.header.get("trained", False))

    @property
    def running(self) -> dict:
        return dict(self.header.get("running", {}))

    def config(self) -> ExperimentConfig:
        return ExperimentConfig(**self.header["config"])

    def module_state(self, name: str) -> dict:
        prefix = f"{name}/"
        return {key[len(prefix):]: value for key, value in self.tensors.items() if key.startswith(prefix)}


def _optimizer_blocks(name: str, optimizer: torch.optim.Optimizer):
    """Adam 等の状態をテンソル部分（ブロック）と JSON 部分に分ける"""
    state_dict = optimizer.state_dict()
    blocks = {}
    scalars = {}
    for index, entry in state_dict["state"].items():
        for key, value in entry.items():
            if isinstance(value, torch.Tensor):
                blocks[f"optim/{name}/{index}/{key}"] = value
            else:
                scalars.setdefault(str(index), {})[key] = value
    return blocks, {"param_groups": state_dict["param_groups"], "scalars": scalars}


def save_checkpoint(path, modules: dict, config: ExperimentConfig, kind: str, step: int = 0,
                    seed: int = 0, optimizers: dict = None, trained: bool = False,
                    running: dict = None, extra: dict = None) -> Path:
    """ネットワーク群（と任意でオプティマイザ）を1ファイルに保存する

    Args:
        path: 出力パス（親ディレクトリは作成する）
        modules: {名前: nn.Module}
        config: 実行設定（指紋をヘッダに埋め込む）
        kind: "attribute" / "segmentation" / "inpaint"
        step: 学習ステップ
        seed: ルートシード
        optimizers: {名前: Optimizer}
        trained: 学習済みフラグ
        running: 損失の移動平均など
        extra: 付加情報（事前学習の評価値など）

    Returns:
        書き込んだパス
    """
    tensors = {}
    for name, module in modules.items():
        for key, value in module.state_dict().items():
            tensors[f"{name}/{key}"] = value
    optimizer_meta = {}
    for name, optimizer in (optimizers or {}).items():
        blocks, meta = _optimizer_blocks(name, optimizer)
        tensors.update(blocks)
        optimizer_meta[name] = meta

    table = []
    payload = []
    offset = 0
    for name, value in tensors.items():
        array = value.detach().cpu().numpy().astype(_DTYPE)
        table.append({"name": name, "shape": list(array.shape), "offset": offset, "count": int(array.size)})
        payload.append(array.tobytes(order="C"))
        offset += array.size * _DTYPE.itemsize

    header = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": kind,
        "fingerprint": config.fingerprint(),
        "model_fingerprint": config.model_fingerprint(compatibility_keys(kind)),
        "step": int(step),
        "seed": int(seed),
        "trained": bool(trained),
        "config": config.to_dict(),
        "optimizers": optimizer_meta,
        "running": dict(running or {}),
        "extra": dict(extra or {}),
        "blocks": table,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp_path = path.with_name(path.name + ".tmp")
    with open(tmp_path, "wb") as f:
        f.write(MAGIC)
        f.write(_LENGTH.pack(len(header_bytes)))
        f.write(header_bytes)
        for chunk in payload:
            f.write(chunk)
    os.replace(tmp_path, path)
    logger.debug("saved %s (kind=%s, step=%d, %d blocks)", path, kind, step, len(table))
    return path


_REQUIRED_HEADER = ("format_version", "kind", "model_fingerprint", "step", "seed", "config", "blocks")


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _check_header(header, path) -> None:
    """JSON として読めたヘッダの構造を検証する（壊れていれば CORRUPT_CHECKPOINT）"""
    if not isinstance(header, dict):
        raise CheckpointError(f"CORRUPT_CHECKPOINT: {path}: ヘッダがオブジェクトではありません")
    missing = [key for key in _REQUIRED_HEADER if key not in header]
    if missing:
        raise CheckpointError(f"CORRUPT_CHECKPOINT: {path}: ヘッダに {missing} がありません")
    for key in ("step", "seed"):
        if not _is_int(header[key]) or header[key] < 0:
            raise CheckpointError(f"CORRUPT_CHECKPOINT: {path}: {key}={header[key]!r} が不正です")
    if not isinstance(header["kind"], str) or not isinstance(header["config"], dict):
        raise CheckpointError(f"CORRUPT_CHECKPOINT: {path}: kind / config の型が不正です")
    for key in ("optimizers", "running", "extra"):
        if not isinstance(header.get(key, {}), dict):
            raise CheckpointError(f"CORRUPT_CHECKPOINT: {path}: {key} がオブジェクトではありません")
    if not isinstance(header["blocks"], list):
        raise CheckpointError(f"CORRUPT_CHECKPOINT: {path}: blocks がリストではありません")
    names = set()
    for index, block in enumerate(header["blocks"]):
        if not isinstance(block, dict):
            raise CheckpointError(f"CORRUPT_CHECKPOINT: {path}: ブロック {index} がオブジェクトではありません")
        absent = [key for key in ("name", "shape", "offset", "count") if key not in block]
        if absent:
            raise CheckpointError(f"CORRUPT_CHECKPOINT: {path}: ブロック {index} に {absent} がありません")
        if not isinstance(block["name"], str) or block["name"] in names:
            raise CheckpointError(f"CORRUPT_CHECKPOINT: {path}: ブロック {index} の名前 {block['name']!r} が不正です")
        names.add(block["name"])
        shape = block["shape"]
        if not isinstance(shape, list) or not all(_is_int(n) and n >= 0 for n in shape):
            raise CheckpointError(f"CORRUPT_CHECKPOINT: {path}: ブロック {block['name']} の形状 {shape!r} が不正です")
        if not _is_int(block["offset"]) or not _is_int(block["count"]) or block["count"] < 0:
            raise CheckpointError(f"CORRUPT_CHECKPOINT: {path}: ブロック {block['name']} の位置が不正です")


def _parse(raw: bytes, path) -> CheckpointData:
    if len(raw) < len(MAGIC) + _LENGTH.size or raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"CORRUPT_CHECKPOINT: {path}: 先頭のマジックが一致しません")
    (header_length,) = _LENGTH.unpack_from(raw, len(MAGIC))
    start = len(MAGIC) + _LENGTH.size
    if start + header_length > len(raw):
        raise CheckpointError(f"CORRUPT_CHECKPOINT: {path}: ヘッダ長 {header_length} がファイルを超えています")
    try:
        header = json.loads(raw[start:start + header_length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"CORRUPT_CHECKPOINT: {path}: ヘッダを解析できません ({e})")
    _check_header(header, path)

    data_start = start + header_length
    data_length = len(raw) - data_start
    for block in header["blocks"]:
        count = int(np.prod(block["shape"], dtype=np.int64)) if block["shape"] else 1
        end = block["offset"] + block["count"] * _DTYPE.itemsize
        if count != block["count"] or block["offset"] < 0 or end > data_length:
            raise CheckpointError(f"CORRUPT_CHECKPOINT: {path}: ブロック {block['name']} が不正です")
    if header["blocks"]:
        last = max(b["offset"] + b["count"] * _DTYPE.itemsize for b in header["blocks"])
        if last != data_length:
            raise CheckpointError(f"CORRUPT_CHECKPOINT: {path}: データ長 {data_length} ≠ {last}")
    elif data_length:
        raise CheckpointError(f"CORRUPT_CHECKPOINT: {path}: ブロック表にないデータがあります")

    tensors = {}
    for block in header["blocks"]:
        array = np.frombuffer(raw, dtype=_DTYPE, count=block["count"], offset=data_start + block["offset"])
        tensors[block["name"]] = torch.from_numpy(array.astype(np.float32).reshape(block["shape"]))
    return CheckpointData(header=header, tensors=tensors)


def load_checkpoint(path, expected: ExperimentConfig = None, kind: str = None) -> CheckpointData:
    """チェックポイントを読み込んで検証する

    Args:
        path: チェックポイントのパス
        expected: 互換性を確認する設定（形状に関わるキーの指紋を比較）
        kind: 期待する種別

    Returns:
        CheckpointData

    Raises:
        CheckpointError: ファイルが壊れている
        IncompatibleCheckpointError: 版数・種別・指紋が一致しない
    """
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"CHECKPOINT_NOT_FOUND: {path}")
    data = _parse(path.read_bytes(), path)
    header = data.header
    if header["format_version"] != CHECKPOINT_FORMAT_VERSION:
        raise IncompatibleCheckpointError(
            f"INCOMPATIBLE_CHECKPOINT: {path}: 版数 {header['format_version']} ≠ {CHECKPOINT_FORMAT_VERSION}"
        )
    if kind is not None and header["kind"] != kind:
        raise IncompatibleCheckpointError(f"INCOMPATIBLE_CHECKPOINT: {path}: 種別 {header['kind']!r} ≠ {kind!r}")
    if expected is not None:
        wanted = expected.model_fingerprint(compatibility_keys(header["kind"]))
        if header["model_fingerprint"] != wanted:
            raise IncompatibleCheckpointError(
                f"INCOMPATIBLE_CHECKPOINT: {path}: 設定の指紋 {header['model_fingerprint']} ≠ {wanted}"
            )
    return data


def restore_modules(data: CheckpointData, modules: dict) -> None:
    """モジュールに state_dict を読み込む（キー・形状が揃わなければ IncompatibleCheckpointError）"""
    states = {}
    for name, module in modules.items():
        state = data.module_state(name)
        current = module.state_dict()
        if set(state) != set(current):
            raise IncompatibleCheckpointError(
                f"INCOMPATIBLE_CHECKPOINT: {name} のパラメータ名が一致しません "
                f"(不足 {sorted(set(current) - set(state))[:3]}, 余剰 {sorted(set(state) - set(current))[:3]})"
            )
        for key, value in state.items():
            if tuple(value.shape) != tuple(current[key].shape):
                raise IncompatibleCheckpointError(
                    f"INCOMPATIBLE_CHECKPOINT: {name}/{key} の形状 {tuple(value.shape)} ≠ {tuple(current[key].shape)}"
                )
        states[name] = {key: value.to(current[key].dtype) for key, value in state.items()}
    for name, module in modules.items():
        module.load_state_dict(states[name])
        if hasattr(module, "trained"):
            module.trained = data.trained or data.step > 0


def restore_optimizers(data: CheckpointData, optimizers: dict) -> None:
    """オプティマイザの状態を復元する"""
    meta = data.header.get("optimizers", {})
    for name, optimizer in optimizers.items():
        if name not in meta:
            raise IncompatibleCheckpointError(f"INCOMPATIBLE_CHECKPOINT: オプティマイザ {name} の状態がありません")
        prefix = f"optim/{name}/"
        state = {}
        for key, value in data.tensors.items():
            if key.startswith(prefix):
                index, field_name = key[len(prefix):].split("/", 1)
                state.setdefault(int(index), {})[field_name] = value.clone()
        for index, scalars in meta[name].get("scalars", {}).items():
            state.setdefault(int(index), {}).update(scalars)
        optimizer.load_state_dict({"state": state, "param_groups": meta[name]["param_groups"]})

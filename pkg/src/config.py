"""
Semantic Inpainting Lab - Configuration
実験全体の設定値・既定値・設定ファイルの読み込みを管理
"""
import configparser
import dataclasses
import hashlib
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

from .errors import ConfigurationError


# =============================================
# アプリ情報
# =============================================
APP_NAME = "Semantic Inpainting Lab"
APP_VERSION = "0.4.0"

# チェックポイント・レポートに埋め込むフォーマット版数
CHECKPOINT_FORMAT_VERSION = 1

# =============================================
# モデル既定値
# =============================================
# 属性数（属性カタログは src/synth/scene.py の ATTRIBUTE_NAMES が正）
NUM_ATTRIBUTES = 18
# セグメンテーションのクラス数（背景・円・正方形・三角形）
NUM_CLASSES = 4

# エンコーダの縮小率。M1 = H / 4（64pxでM1=16）、M2 = H / 16（64pxでM2=4）
GENERATOR_DOWNSAMPLE = 4
DISCRIMINATOR_DOWNSAMPLE = 16

# 生成器の中間層（dilated conv）の拡張率
GENERATOR_DILATIONS = (2, 4, 8, 16)
# セグメンテーション埋め込みネットの dilated ブロック
SEGMENTATION_DILATIONS = (2, 4, 8)

# =============================================
# 損失の重みの既定値
# =============================================
DEFAULT_BETA = 0.01
DEFAULT_LAMBDA_A = 0.1
DEFAULT_LAMBDA_S = 0.1

# =============================================
# データ設定
# =============================================
DEFAULT_CANVAS = 64
MIN_CANVAS = 32

# train/val/test の分割比率（サンプル番号順に固定）
SPLIT_FRACTIONS = (("train", 0.8), ("val", 0.1), ("test", 0.1))

# 欠損矩形の一辺の範囲（256pxで80〜160px）
MASK_MIN_FRACTION = 0.3125
MASK_MAX_FRACTION = 0.625

# 検索評価で使う中央欠損の一辺（256pxで128px）
RETRIEVAL_HOLE_FRACTION = 0.5

# データセット用途ごとのシード範囲。d0/d1/d2 が重ならないようオフセットを分ける
DATASET_PURPOSES = {
    "inpaint": 0,
    "attribute": 1,
    "segmentation": 2,
}
SEED_RANGE_STRIDE = 10 ** 9
SAMPLE_SEED_STRIDE = 10 ** 6

# =============================================
# ファイル名
# =============================================
IMAGES_DIR = "images"
SEGS_DIR = "segs"
MANIFEST_FILE = "manifest.jsonl"
DATASET_META_FILE = "dataset.json"
LOSS_LOG_FILE = "loss_log.csv"
LOSS_LOG_COLUMNS = ["step", "loss_Dg", "loss_Da", "loss_Ds", "loss_D", "loss_I", "recon", "adv"]
LOSS_LOG_FINGERPRINT = "fingerprint"

# テンソル形状に影響するキー。チェックポイント互換判定はこのキーだけで行う
MODEL_KEYS = (
    "canvas",
    "n_attributes",
    "n_classes",
    "g_channels",
    "d_channels",
    "embed_channels",
)
# 埋め込みネット（Wa・Ws）のチェックポイントはこのキーだけで互換判定する
EMBEDDING_KEYS = (
    "n_attributes",
    "n_classes",
    "embed_channels",
)


def derive_seed(root: int, *names) -> int:
    """ルートシードから用途別のシードを決定的に切り出す

    Args:
        root: 実行全体のルートシード
        *names: 用途名やステップ番号（文字列化して連結する）

    Returns:
        0以上 2**31 未満の整数シード
    """
    key = ":".join([str(root)] + [str(n) for n in names])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little") & 0x7FFFFFFF


def sample_seed(purpose: str, dataset_seed: int, index: int) -> int:
    """データセット内の1サンプル分のシードを返す（用途ごとに範囲が重ならない）"""
    if purpose not in DATASET_PURPOSES:
        raise ConfigurationError(f"UNKNOWN_PURPOSE: {purpose!r}（{sorted(DATASET_PURPOSES)} のいずれか）")
    if not 0 <= index < SAMPLE_SEED_STRIDE:
        raise ConfigurationError(f"DATASET_TOO_LARGE: index {index} >= {SAMPLE_SEED_STRIDE}")
    return DATASET_PURPOSES[purpose] * SEED_RANGE_STRIDE + dataset_seed * SAMPLE_SEED_STRIDE + index


def split_sizes(n: int) -> dict:
    """サンプル数 n を train/val/test の件数に分ける（端数は test 側）"""
    sizes = {}
    assigned = 0
    for name, fraction in SPLIT_FRACTIONS[:-1]:
        sizes[name] = int(math.floor(n * fraction + 1e-9))
        assigned += sizes[name]
    sizes[SPLIT_FRACTIONS[-1][0]] = n - assigned
    return sizes


def mask_side_range(side: int) -> tuple:
    """キャンバスの一辺から欠損矩形の一辺の [最小, 最大] を返す"""
    return math.ceil(MASK_MIN_FRACTION * side), math.floor(MASK_MAX_FRACTION * side)


# =============================================
# 実験設定
# =============================================
@dataclass
class ExperimentConfig:
    """1回の実行（データ生成・事前学習・学習・評価）を決める設定一式"""

    # データ・出力パス
    data_dir: str = "runs/data/inpaint"
    attr_data_dir: str = "runs/data/attribute"
    seg_data_dir: str = "runs/data/segmentation"
    out_dir: str = "runs/train"
    attr_ckpt: str = "runs/pretrain/attribute.ckpt"
    seg_ckpt: str = "runs/pretrain/segmentation.ckpt"

    # 形状
    canvas: int = DEFAULT_CANVAS
    n_attributes: int = NUM_ATTRIBUTES
    n_classes: int = NUM_CLASSES
    g_channels: int = 48
    d_channels: int = 32
    embed_channels: int = 32

    # 損失の重み
    beta: float = DEFAULT_BETA
    lambda_a: float = DEFAULT_LAMBDA_A
    lambda_s: float = DEFAULT_LAMBDA_S
    squared_recon: bool = False

    # インペインティング学習
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    batch_size: int = 16
    steps: int = 2000
    checkpoint_every: int = 500
    log_every: int = 50

    # 埋め込みネットの事前学習
    pretrain_lr: float = 1e-3
    pretrain_batch_size: int = 32
    pretrain_epochs: int = 10
    pretrain_mask_fraction: float = 0.5

    # 評価
    retrieval_k: int = 10
    ablation_seeds: int = 3

    seed: int = 0

    def canonical_text(self) -> str:
        """キーをソートした `key = value` 形式の正規テキスト"""
        items = dataclasses.asdict(self)
        return "\n".join(f"{key} = {_format_value(items[key])}" for key in sorted(items)) + "\n"

    def fingerprint(self) -> str:
        return hashlib.sha256(self.canonical_text().encode("utf-8")).hexdigest()[:16]

    def model_fingerprint(self, keys=MODEL_KEYS) -> str:
        """テンソル形状に関わるキーだけの指紋（チェックポイント互換判定用）"""
        items = dataclasses.asdict(self)
        text = "\n".join(f"{key} = {_format_value(items[key])}" for key in sorted(keys))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]

    @property
    def m1(self) -> int:
        return self.canvas // GENERATOR_DOWNSAMPLE

    @property
    def m2(self) -> int:
        return self.canvas // DISCRIMINATOR_DOWNSAMPLE

    def replace(self, **changes) -> "ExperimentConfig":
        """変更を適用した新しい設定を返す（検証付き）"""
        updated = dataclasses.replace(self, **changes)
        validate_config(updated)
        return updated

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(key: str, raw) -> object:
    """文字列の設定値をフィールドの型へ変換する"""
    if key not in _FIELD_TYPES:
        raise ConfigurationError(f"UNKNOWN_KEY: {key}")
    kind = _FIELD_TYPES[key]
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if kind in (bool, "bool"):
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind in (int, "int"):
            return int(text)
        if kind in (float, "float"):
            return float(text)
    except ValueError:
        raise ConfigurationError(f"INVALID_VALUE: {key} = {text!r}（{getattr(kind, '__name__', kind)} が必要）")
    return text


# 範囲検証: (キー, 条件, 説明)
_RULES = [
    ("beta", lambda v: v >= 0, ">= 0"),
    ("lambda_a", lambda v: v >= 0, ">= 0"),
    ("lambda_s", lambda v: v >= 0, ">= 0"),
    ("lr_g", lambda v: v >= 0, ">= 0"),
    ("lr_d", lambda v: v >= 0, ">= 0"),
    ("pretrain_lr", lambda v: v >= 0, ">= 0"),
    ("adam_beta1", lambda v: 0 <= v < 1, "[0, 1)"),
    ("adam_beta2", lambda v: 0 <= v < 1, "[0, 1)"),
    ("batch_size", lambda v: v >= 1, ">= 1"),
    ("pretrain_batch_size", lambda v: v >= 1, ">= 1"),
    ("steps", lambda v: v >= 0, ">= 0"),
    ("checkpoint_every", lambda v: v >= 1, ">= 1"),
    ("log_every", lambda v: v >= 1, ">= 1"),
    ("pretrain_epochs", lambda v: v >= 0, ">= 0"),
    ("pretrain_mask_fraction", lambda v: 0 <= v <= 1, "[0, 1]"),
    ("canvas", lambda v: v >= MIN_CANVAS and v % DISCRIMINATOR_DOWNSAMPLE == 0, f">= {MIN_CANVAS} かつ 16の倍数"),
    ("n_attributes", lambda v: v >= 1, ">= 1"),
    ("n_classes", lambda v: v >= 2, ">= 2"),
    ("g_channels", lambda v: v >= 1, ">= 1"),
    ("d_channels", lambda v: v >= 1, ">= 1"),
    ("embed_channels", lambda v: v >= 1, ">= 1"),
    ("retrieval_k", lambda v: v >= 1, ">= 1"),
    ("ablation_seeds", lambda v: v >= 1, ">= 1"),
    ("seed", lambda v: v >= 0, ">= 0"),
]


def validate_config(config: ExperimentConfig) -> None:
    """範囲外の値があれば ConfigurationError（キー名つき）"""
    for key, rule, description in _RULES:
        value = getattr(config, key)
        if not rule(value):
            raise ConfigurationError(f"OUT_OF_RANGE: {key} = {value}（{description}）")


def parse_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> ExperimentConfig:
    """設定ファイルとフラグから ExperimentConfig を組み立てる

    ファイルは INI 形式のフラットな key = value。セクション見出しは省略可
    （省略時は [experiment] とみなす）。フラグ（overrides）はファイルの値より優先する。

    Args:
        path: 設定ファイルのパス（None なら既定値のみ）
        overrides: {キー: 値} のフラグ上書き（値は文字列でも可）

    Returns:
        検証済みの ExperimentConfig
    """
    values = {}
    if path is not None:
        config_path = Path(path)
        if not config_path.exists():
            raise ConfigurationError(f"CONFIG_NOT_FOUND: {config_path}")
        text = config_path.read_text(encoding="utf-8")
        if not text.lstrip().startswith("["):
            text = "[experiment]\n" + text
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as e:
            raise ConfigurationError(f"CONFIG_PARSE_ERROR: {config_path}: {e}")
        for section in parser.sections():
            for key, raw in parser.items(section):
                values[key] = _coerce(key, raw)

    for key, raw in (overrides or {}).items():
        if raw is None:
            continue
        values[key] = _coerce(key, raw)

    config = ExperimentConfig(**values)
    validate_config(config)
    return config


def parse_set_flags(pairs) -> dict:
    """CLIの `--set key=value` を辞書に変換する"""
    result = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigurationError(f"INVALID_FLAG: --set {pair!r}（key=value 形式）")
        key, value = pair.split("=", 1)
        result[key.strip()] = value.strip()
    return result

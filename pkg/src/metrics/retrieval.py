"""
Semantic Inpainting Lab - Retrieval Evaluation
検索ベースの意味的評価（mAP）

元のクエリ画像で検索した上位K件を正解とし、中央を欠損させて復元したクエリで
検索し直したときの平均適合率（AP）を求める。欠損画像のまま検索した場合の mAP も基準として出す。
"""
import hashlib
from dataclasses import asdict, dataclass, field
from typing import Callable, List

import numpy as np
import torch
from tqdm import tqdm

from ..core import Mask, apply_mask, stack_masks
from ..errors import ConfigurationError, RejectedInputError
from ..logging_utils import get_logger
from ..nets import extract_features
from ..synth import center_mask

FEATURE_BATCH_SIZE = 64
DEVIATION_NOTE = (
    "retrieval features are the attribute network's pooled penultimate activations "
    "(VGG-16 FC2 features are not used)"
)

logger = get_logger("retrieval")


def module_fingerprint(module: torch.nn.Module) -> str:
    """パラメータの値から決まる指紋（SHA-256 先頭16桁）"""
    digest = hashlib.sha256()
    for key, value in module.state_dict().items():
        digest.update(key.encode("utf-8"))
        digest.update(value.detach().cpu().to(torch.float32).numpy().tobytes())
    return digest.hexdigest()[:16]


@dataclass
class RetrievalCorpus:
    """検索対象の集合

    Attributes:
        ids: 一意なアイテムID
        features: (n, D) の特徴
        fingerprint: ids と特徴から計算した指紋
    """

    ids: List[str]
    features: np.ndarray
    fingerprint: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] != len(self.ids):
            raise RejectedInputError(
                f"DIMENSION_MISMATCH: features {self.features.shape} と ids {len(self.ids)} 件"
            )
        if len(set(self.ids)) != len(self.ids):
            raise RejectedInputError("DUPLICATE_ID: コーパスのIDが重複しています")
        if not self.fingerprint:
            digest = hashlib.sha256()
            for identifier in self.ids:
                digest.update(str(identifier).encode("utf-8") + b"\0")
            digest.update(np.ascontiguousarray(self.features).tobytes())
            self.fingerprint = digest.hexdigest()[:16]
        # 同距離のときのID順
        self._id_rank = np.argsort(np.argsort(np.asarray(self.ids, dtype=object).astype(str), kind="stable"))

    def __len__(self) -> int:
        return len(self.ids)


def features_of(attr_net, images: torch.Tensor, progress: bool = False) -> np.ndarray:
    """画像群の検索用特徴を (n, D) の float64 配列で返す"""
    chunks = []
    for start in tqdm(range(0, images.shape[0], FEATURE_BATCH_SIZE), desc="features",
                      disable=not progress, leave=False):
        chunks.append(extract_features(attr_net, images[start:start + FEATURE_BATCH_SIZE]).to(torch.float64).numpy())
    if not chunks:
        return np.zeros((0, attr_net.feature_dim))
    return np.concatenate(chunks, axis=0)


def build_corpus(ids, images: torch.Tensor, attr_net, progress: bool = False) -> RetrievalCorpus:
    return RetrievalCorpus(ids=[str(i) for i in ids], features=features_of(attr_net, images, progress))


def retrieve(query_features, corpus: RetrievalCorpus) -> list:
    """全アイテムをユークリッド距離の昇順（同距離はID昇順）に並べたIDリスト"""
    if len(corpus) == 0:
        raise RejectedInputError("EMPTY_CORPUS: 検索対象がありません")
    query = np.asarray(query_features, dtype=np.float64).reshape(-1)
    if query.shape[0] != corpus.features.shape[1]:
        raise RejectedInputError(
            f"DIMENSION_MISMATCH: クエリ特徴 {query.shape[0]} ≠ コーパス特徴 {corpus.features.shape[1]}"
        )
    distances = np.linalg.norm(corpus.features - query[None, :], axis=1)
    order = np.lexsort((corpus._id_rank, distances))
    return [corpus.ids[i] for i in order]


def average_precision(ranking, relevant) -> float:
    """AP = (1/|R|)·Σ_{r∈R} precision@rank(r)"""
    relevant = set(relevant)
    if not relevant:
        raise RejectedInputError("EMPTY_RELEVANT_SET: 正解集合が空です")
    missing = relevant - set(ranking)
    if missing:
        raise RejectedInputError(f"RELEVANT_NOT_RANKED: 順位にない正解 {sorted(missing)[:3]}")
    hits = 0
    total = 0.0
    for rank, item in enumerate(ranking, start=1):
        if item in relevant:
            hits += 1
            total += hits / rank
            if hits == len(relevant):
                break
    return total / len(relevant)


@dataclass
class ProtocolResult:
    """意味的 mAP 評価の結果

    Attributes:
        per_query_ap: 復元クエリの AP
        map: per_query_ap の平均
        masked_map: 欠損クエリのまま検索したときの mAP
        k: 正解集合の大きさ
        extractor_fingerprint: 特徴抽出ネットの指紋
        variant: 検索に使った復元画像の種類（"raw" は生成器の出力 z、"composited" は欠損内だけ z）
    """

    per_query_ap: List[float]
    map: float
    masked_map: float
    k: int
    extractor_fingerprint: str
    corpus_fingerprint: str = ""
    hole_fraction: float = 0.5
    deviation: str = DEVIATION_NOTE
    variant: str = "raw"
    rows: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _check_trained(name: str, component) -> None:
    if getattr(component, "trained", True) is False:
        raise ConfigurationError(f"UNTRAINED_COMPONENT: {name} が学習済みではありません")


def semantic_map_protocol(query_ids, queries: torch.Tensor, corpus: RetrievalCorpus, inpainter: Callable,
                          attr_net, k: int = 10, masker: Callable = None,
                          progress: bool = False) -> ProtocolResult:
    """検索ベースの mAP 評価

    Args:
        query_ids: クエリのID
        queries: 元のクエリ画像 (Q, 3, H, W)
        corpus: 検索対象（attr_net の特徴で作ったもの）
        inpainter: inpainter(x, masks) -> 復元画像。x は欠損画像 (B,3,H,W)、masks は (B,1,H,W)
        attr_net: 特徴抽出に使う AttributeNet
        k: 正解集合の大きさ
        masker: canvas -> Mask（既定は一辺の半分の中央欠損）

    Returns:
        ProtocolResult
    """
    _check_trained("attr_net", attr_net)
    _check_trained("inpainter", inpainter)
    if k < 1:
        raise RejectedInputError(f"OUT_OF_RANGE: k={k}（1以上）")
    if k > len(corpus):
        raise RejectedInputError(f"OUT_OF_RANGE: k={k} がコーパス {len(corpus)} 件を超えています")
    if queries.shape[0] != len(query_ids):
        raise RejectedInputError(f"DIMENSION_MISMATCH: クエリ {queries.shape[0]} 枚と ID {len(query_ids)} 件")

    canvas = tuple(queries.shape[-2:])
    mask = (masker or center_mask)(canvas)
    if not isinstance(mask, Mask):
        raise RejectedInputError("INVALID_MASK: masker は Mask を返す必要があります")
    masks = stack_masks([mask] * queries.shape[0])
    masked = apply_mask(queries, masks)
    restored_chunks = []
    for start in range(0, queries.shape[0], FEATURE_BATCH_SIZE):
        end = start + FEATURE_BATCH_SIZE
        restored_chunks.append(inpainter(masked[start:end], masks[start:end]))
    restored = torch.cat(restored_chunks) if restored_chunks else masked

    original_features = features_of(attr_net, queries, progress)
    restored_features = features_of(attr_net, restored, progress)
    masked_features = features_of(attr_net, masked, progress)

    rows = []
    aps, masked_aps = [], []
    for i, query_id in enumerate(query_ids):
        relevant = retrieve(original_features[i], corpus)[:k]
        ap = average_precision(retrieve(restored_features[i], corpus), relevant)
        masked_ap = average_precision(retrieve(masked_features[i], corpus), relevant)
        aps.append(ap)
        masked_aps.append(masked_ap)
        rows.append({"query": str(query_id), "ap": ap, "masked_ap": masked_ap, "relevant": relevant})

    result = ProtocolResult(
        per_query_ap=aps,
        map=float(np.mean(aps)) if aps else 0.0,
        masked_map=float(np.mean(masked_aps)) if masked_aps else 0.0,
        k=k,
        extractor_fingerprint=module_fingerprint(attr_net),
        corpus_fingerprint=corpus.fingerprint,
        hole_fraction=mask.height / canvas[0],
        variant=getattr(inpainter, "variant", "custom"),
        rows=rows,
    )
    logger.info("mAP=%.4f masked mAP=%.4f (K=%d, %d queries, %s)",
                result.map, result.masked_map, k, len(aps), result.variant)
    return result

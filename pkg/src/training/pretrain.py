"""
Semantic Inpainting Lab - Embedding Pretraining
属性ネット Wa とセグメンテーションネット Ws を補助データセットで事前学習する

入力の半分（pretrain_mask_fraction）にはランダム矩形の欠損を入れ、
欠損画像（インペインティング時の実際の入力）でも予測が安定するようにする。
"""
import numpy as np
import torch
import torch.nn.functional as F
from tqdm import tqdm

from ..config import ExperimentConfig, derive_seed
from ..core import apply_mask
from ..errors import RejectedInputError
from ..logging_utils import get_logger
from ..nets import AttributeNet, SegmentationNet, predict_attributes, predict_segmentation
from ..synth import sample_mask

EVAL_BATCH_SIZE = 64


def attribute_loss(net: AttributeNet, images: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """属性ごとの二値交差エントロピー（平均）"""
    return F.binary_cross_entropy_with_logits(net(images), targets.to(images.dtype))


def segmentation_loss(net: SegmentationNet, images: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """画素ごとの交差エントロピー（平均）"""
    return F.cross_entropy(net(images), labels.long())


def _held_out(dataset):
    for split in ("val", "test"):
        part = dataset.subset(split)
        if len(part):
            return part
    return dataset


def _train_part(dataset):
    part = dataset.subset("train")
    return part if len(part) else dataset


def augment_batch(images: torch.Tensor, seed: int, epoch: int, indices, fraction: float) -> torch.Tensor:
    """サンプルごとに fraction の確率で矩形欠損を入れる（シード・エポック・番号から決定的）"""
    if fraction <= 0:
        return images
    canvas = tuple(images.shape[-2:])
    out = images.clone()
    for row, index in enumerate(indices):
        sample_seed = derive_seed(seed, "augment", epoch, int(index))
        if np.random.default_rng(sample_seed).random() < fraction:
            out[row] = apply_mask(images[row], sample_mask(sample_seed, canvas))
    return out


def _fit(net, loss_fn, images, targets, config: ExperimentConfig, epochs: int, seed: int,
         name: str, progress: bool) -> list:
    logger = get_logger(name)
    optimizer = torch.optim.Adam(net.parameters(), lr=config.pretrain_lr)
    size = images.shape[0]
    history = []
    net.train()
    for epoch in range(epochs):
        order = np.random.default_rng(derive_seed(seed, name, "shuffle", epoch)).permutation(size)
        total = 0.0
        batches = range(0, size, config.pretrain_batch_size)
        for start in tqdm(batches, desc=f"{name} {epoch + 1}/{epochs}", disable=not progress, leave=False):
            index = order[start:start + config.pretrain_batch_size]
            batch = augment_batch(images[index], seed, epoch, index, config.pretrain_mask_fraction)
            optimizer.zero_grad()
            loss = loss_fn(net, batch, targets[index])
            loss.backward()
            optimizer.step()
            total += float(loss.detach()) * len(index)
        history.append(total / size)
        logger.info("epoch %d/%d loss=%.5f", epoch + 1, epochs, history[-1])
    net.eval()
    return history


@torch.no_grad()
def evaluate_attribute_net(net: AttributeNet, images: torch.Tensor, attributes: torch.Tensor) -> dict:
    """属性ごとの正解率（確率 > 0.5 を陽性とする）"""
    net.eval()
    correct = torch.zeros(attributes.shape[1], dtype=torch.float64)
    for start in range(0, images.shape[0], EVAL_BATCH_SIZE):
        probs = predict_attributes(net, images[start:start + EVAL_BATCH_SIZE])
        truth = attributes[start:start + EVAL_BATCH_SIZE] > 0.5
        correct += ((probs > 0.5) == truth).to(torch.float64).sum(dim=0)
    per_attribute = (correct / max(images.shape[0], 1)).tolist()
    return {
        "per_attribute_accuracy": per_attribute,
        "mean_accuracy": float(np.mean(per_attribute)),
    }


@torch.no_grad()
def evaluate_segmentation_net(net: SegmentationNet, images: torch.Tensor, labels: torch.Tensor) -> dict:
    """クラスごとの画素正解率と、正解に現れたクラスでの平均"""
    net.eval()
    n_classes = net.n_classes
    hits = torch.zeros(n_classes, dtype=torch.float64)
    counts = torch.zeros(n_classes, dtype=torch.float64)
    for start in range(0, images.shape[0], EVAL_BATCH_SIZE):
        predicted, _ = predict_segmentation(net, images[start:start + EVAL_BATCH_SIZE])
        truth = labels[start:start + EVAL_BATCH_SIZE]
        for c in range(n_classes):
            member = truth == c
            counts[c] += member.sum()
            hits[c] += (member & (predicted == c)).sum()
    present = counts > 0
    per_class = torch.where(present, hits / counts.clamp(min=1), torch.full_like(hits, float("nan")))
    return {
        "per_class_accuracy": [None if np.isnan(v) else float(v) for v in per_class.tolist()],
        "mean_class_accuracy": float(per_class[present].mean()) if present.any() else 0.0,
        "pixel_accuracy": float(hits.sum() / counts.sum().clamp(min=1)),
    }


def pretrain_attribute(dataset, config: ExperimentConfig, epochs: int = None, seed: int = None,
                       progress: bool = False):
    """属性ネット Wa を事前学習する

    Args:
        dataset: LabeledDataset（train で学習し、val / test で評価する）
        config: 学習率・バッチサイズ・欠損率・チャネル幅
        epochs: エポック数（None なら config.pretrain_epochs）
        seed: シード（None なら config.seed）
        progress: tqdm の進捗表示

    Returns:
        Tuple[AttributeNet, metrics]
    """
    if len(dataset) == 0:
        raise RejectedInputError("EMPTY_DATASET: 属性ネットの事前学習データがありません")
    epochs = config.pretrain_epochs if epochs is None else epochs
    seed = config.seed if seed is None else seed
    torch.manual_seed(derive_seed(seed, "init", "attribute"))
    net = AttributeNet(n_attributes=dataset.attributes.shape[1], channels=config.embed_channels)

    train_part = _train_part(dataset)
    history = _fit(net, attribute_loss, train_part.images, train_part.attributes, config,
                   epochs, seed, "pretrain_attribute", progress)
    held_out = _held_out(dataset)
    metrics = evaluate_attribute_net(net, held_out.images, held_out.attributes)
    metrics.update({"loss_history": history, "final_loss": history[-1] if history else None,
                    "epochs": epochs, "seed": seed, "n_train": len(train_part), "n_eval": len(held_out)})
    net.trained = epochs > 0
    return net, metrics


def pretrain_segmentation(dataset, config: ExperimentConfig, epochs: int = None, seed: int = None,
                          progress: bool = False):
    """セグメンテーションネット Ws を事前学習する（引数・戻り値は pretrain_attribute と同じ形）"""
    if len(dataset) == 0:
        raise RejectedInputError("EMPTY_DATASET: セグメンテーションネットの事前学習データがありません")
    epochs = config.pretrain_epochs if epochs is None else epochs
    seed = config.seed if seed is None else seed
    torch.manual_seed(derive_seed(seed, "init", "segmentation"))
    net = SegmentationNet(n_classes=config.n_classes, channels=config.embed_channels)

    train_part = _train_part(dataset)
    history = _fit(net, segmentation_loss, train_part.images, train_part.segmentations, config,
                   epochs, seed, "pretrain_segmentation", progress)
    held_out = _held_out(dataset)
    metrics = evaluate_segmentation_net(net, held_out.images, held_out.segmentations)
    metrics.update({"loss_history": history, "final_loss": history[-1] if history else None,
                    "epochs": epochs, "seed": seed, "n_train": len(train_part), "n_eval": len(held_out)})
    net.trained = epochs > 0
    return net, metrics

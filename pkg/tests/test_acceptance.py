"""
Semantic Inpainting Lab - Calibration Runs
64px の合成データで事前学習から2000ステップの学習まで回し、学習後の振る舞いを確かめる
（--run-slow のときだけ実行。3シードの中央値で判定する）
"""
import statistics
import pytest
import sys
import os

import numpy as np
import torch

# srcディレクトリをパスに追加
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.config import ExperimentConfig
from src.data_loader import load_dataset
from src.experiments import evaluate_pixel, load_inpainter
from src.metrics import build_corpus, semantic_map_protocol
from src.nets import (
    predict_attributes,
    predict_segmentation,
    sample_mismatched,
    score_attribute,
    score_segmentation,
)
from src.synth import ATTRIBUTE_NAMES, build_dataset, generate_scene
from src.training import (
    load_train_state,
    pretrain_attribute,
    pretrain_segmentation,
    save_checkpoint,
    train,
)

pytestmark = pytest.mark.slow

SEEDS = (0, 1, 2)
CANVAS = 64
STEPS = 2000
# test split が256件になる大きさ（80/10/10）
INPAINT_SAMPLES = 2560
EMBED_SAMPLES = 4000
CORPUS_SIZE = 500
QUERY_COUNT = 50
FULL = 0.1
NONE = 0.0


@pytest.fixture(scope="module")
def calibrated(tmp_path_factory):
    """事前学習済み Wa・Ws と、シードごとの完全モデル（λa=λs=0.1）・正則化なしモデル（λa=λs=0）"""
    root = tmp_path_factory.mktemp("calibration")
    config = ExperimentConfig(
        canvas=CANVAS,
        steps=STEPS,
        checkpoint_every=STEPS,
        log_every=500,
        data_dir=str(root / "data" / "inpaint"),
        attr_data_dir=str(root / "data" / "attribute"),
        seg_data_dir=str(root / "data" / "segmentation"),
        attr_ckpt=str(root / "pretrain" / "attribute.ckpt"),
        seg_ckpt=str(root / "pretrain" / "segmentation.ckpt"),
        out_dir=str(root / "train"),
    )
    build_dataset(INPAINT_SAMPLES, 0, (CANVAS, CANVAS), config.data_dir, purpose="inpaint", progress=False)
    build_dataset(EMBED_SAMPLES, 0, (CANVAS, CANVAS), config.attr_data_dir, purpose="attribute", progress=False)
    build_dataset(EMBED_SAMPLES, 0, (CANVAS, CANVAS), config.seg_data_dir, purpose="segmentation", progress=False)
    attr_net, _ = pretrain_attribute(load_dataset(config.attr_data_dir), config)
    seg_net, _ = pretrain_segmentation(load_dataset(config.seg_data_dir), config)
    save_checkpoint(config.attr_ckpt, {"attr_net": attr_net}, config, kind="attribute", trained=True)
    save_checkpoint(config.seg_ckpt, {"seg_net": seg_net}, config, kind="segmentation", trained=True)

    checkpoints = {}
    for weight in (FULL, NONE):
        for seed in SEEDS:
            run_config = config.replace(seed=seed, lambda_a=weight, lambda_s=weight,
                                        out_dir=str(root / "train" / f"lambda_{weight}" / f"seed_{seed}"))
            checkpoints[(weight, seed)] = train(run_config, progress=False)["checkpoint"]
    return config, checkpoints


@pytest.fixture(scope="module")
def held_out(calibrated):
    config, _ = calibrated
    return load_dataset(config.data_dir, split="test")


class TestAttributeMarginals:
    """生成器の属性の出現率"""

    def test_each_attribute_between_ten_and_ninety_percent(self):
        attributes = np.stack([generate_scene(seed, (CANVAS, CANVAS)).attributes.numpy() for seed in range(10_000)])
        rates = attributes.mean(axis=0)
        for name, rate in zip(ATTRIBUTE_NAMES, rates):
            assert 0.10 <= rate <= 0.90, f"{name}: {rate:.3f}"


class TestMatchingAwareness:
    """学習後の Da・Ds は正しい組を入れ替えた組より高く評価する"""

    @staticmethod
    def gaps(checkpoint, dataset) -> tuple:
        state = load_train_state(checkpoint)
        state.d_attr.eval()
        state.d_seg.eval()
        y = dataset.images
        attr_y = predict_attributes(state.attr_net, y)
        labels_y, _ = predict_segmentation(state.seg_net, y)
        mismatch = sample_mismatched((attr_y > 0.5).to(torch.uint8), seed=0)
        assert mismatch.degenerate is False
        attr_gap = (score_attribute(state.d_attr, y, attr_y).mean()
                    - score_attribute(state.d_attr, y, mismatch.apply(attr_y)).mean())
        seg_gap = (score_segmentation(state.d_seg, y, labels_y).mean()
                   - score_segmentation(state.d_seg, y, mismatch.apply(labels_y)).mean())
        return float(attr_gap), float(seg_gap)

    def test_matched_scored_above_mismatched(self, calibrated, held_out):
        _, checkpoints = calibrated
        assert len(held_out) == 256
        gaps = [self.gaps(checkpoints[(FULL, seed)], held_out) for seed in SEEDS]
        assert statistics.median(g[0] for g in gaps) > 0
        assert statistics.median(g[1] for g in gaps) > 0


class TestPixelGain:
    """合成画像は欠損画像より PSNR で3dB以上良い"""

    def test_composited_beats_masked(self, calibrated, held_out):
        _, checkpoints = calibrated
        gains = []
        for seed in SEEDS:
            summary = evaluate_pixel(load_inpainter(checkpoints[(FULL, seed)]), held_out, seed=0)["summary"]
            gains.append(summary["composited"]["psnr"] - summary["masked"]["psnr"])
        assert statistics.median(gains) >= 3.0


class TestRegularizationTrend:
    """属性・セグメンテーションの正則化は属性の整合を下げない"""

    def test_full_model_at_least_unregularized(self, calibrated, held_out):
        _, checkpoints = calibrated

        def consistency(weight):
            return statistics.median(
                evaluate_pixel(load_inpainter(checkpoints[(weight, seed)]), held_out, seed=0)["attribute_consistency"]
                for seed in SEEDS
            )

        assert consistency(FULL) >= consistency(NONE)


class TestSemanticRetrieval:
    """復元クエリの mAP は欠損クエリの mAP を0.05以上上回る"""

    def test_restored_beats_masked(self, calibrated, held_out):
        config, checkpoints = calibrated
        corpus_set = load_dataset(config.data_dir).take(range(CORPUS_SIZE))
        queries = held_out.take(range(QUERY_COUNT))
        margins = []
        for seed in SEEDS:
            inpainter = load_inpainter(checkpoints[(FULL, seed)])
            corpus = build_corpus(corpus_set.ids, corpus_set.images, inpainter.attr_net)
            result = semantic_map_protocol(queries.ids, queries.images, corpus, inpainter, inpainter.attr_net,
                                           k=config.retrieval_k)
            assert result.variant == "raw"
            margins.append(result.map - result.masked_map)
        assert statistics.median(margins) >= 0.05

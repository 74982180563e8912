"""
Semantic Inpainting Lab - Command Line Tests
"""
import json
import pytest
import struct
import sys
import os

import numpy as np
from PIL import Image

# srcディレクトリをパスに追加
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import app
from src.errors import RejectedInputError
from src.training import load_checkpoint
from src.training.checkpoint import MAGIC


def write_ini(path, config) -> str:
    """設定を INI ファイルに書き出す"""
    lines = [f"{key} = {str(value).lower() if isinstance(value, bool) else value}"
             for key, value in config.to_dict().items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return str(path)


def run(capsys, *argv):
    code = app.main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture(scope="module")
def trained_run(tiny_pipeline, tmp_path_factory):
    """CLI の train で学習した出力ディレクトリと設定ファイル"""
    _, config = tiny_pipeline
    root = tmp_path_factory.mktemp("cli")
    ini = write_ini(root / "run.ini", config.replace(out_dir=str(root / "train")))
    assert app.main(["train", "--config", ini, "--steps", "2", "--quiet"]) == 0
    return root, ini, config


class TestParseMask:
    """parse_mask関数のテスト"""

    def test_rectangle_text(self):
        mask = app.parse_mask("1,2,3,4", (32, 32))
        assert mask.bbox == (1, 2, 3, 4)

    def test_mask_image_bounding_box(self, tmp_path):
        bits = np.zeros((32, 32), dtype=np.uint8)
        bits[5:15, 8:20] = 255
        Image.fromarray(bits).save(tmp_path / "mask.png")
        mask = app.parse_mask(str(tmp_path / "mask.png"), (32, 32))
        assert mask.bbox == (5, 8, 10, 12)

    def test_invalid_text(self):
        with pytest.raises(RejectedInputError, match="INVALID_MASK"):
            app.parse_mask("a,b,c,d", (32, 32))

    def test_outside_canvas(self):
        with pytest.raises(RejectedInputError, match="MASK_OUT_OF_CANVAS"):
            app.parse_mask("30,30,8,8", (32, 32))


class TestGenData:
    """gen-data サブコマンドのテスト"""

    def test_writes_dataset(self, tmp_path, capsys):
        code, out, _ = run(capsys, "gen-data", "--n", "5", "--size", "32", "--seed", "1",
                           "--out", str(tmp_path / "d"), "--quiet")
        assert code == 0
        summary = json.loads(out)
        assert summary["n"] == 5
        assert (tmp_path / "d" / "manifest.jsonl").exists()

    def test_bad_size(self, tmp_path, capsys):
        code, _, err = run(capsys, "gen-data", "--n", "5", "--size", "40", "--out", str(tmp_path / "d"))
        assert code == 1
        assert "canvas" in err


class TestPretrain:
    """pretrain-attr / pretrain-seg サブコマンドのテスト"""

    def test_attribute_checkpoint(self, tiny_pipeline, tmp_path, capsys):
        _, config = tiny_pipeline
        out = tmp_path / "attr.ckpt"
        code, stdout, _ = run(capsys, "pretrain-attr", "--data", config.attr_data_dir, "--epochs", "1",
                              "--set", "embed_channels=2", "--out", str(out), "--quiet")
        assert code == 0
        assert "mean_accuracy" in json.loads(stdout)
        data = load_checkpoint(out, kind="attribute")
        assert data.trained

    def test_missing_dataset(self, tmp_path, capsys):
        code, _, err = run(capsys, "pretrain-seg", "--data", str(tmp_path / "absent"),
                           "--out", str(tmp_path / "seg.ckpt"), "--quiet")
        assert code == 1
        assert "DATASET_INVALID" in err


class TestTrainAndEvaluate:
    """train・inpaint・eval-* サブコマンドのテスト"""

    def test_train_outputs(self, trained_run):
        root, _, _ = trained_run
        assert (root / "train" / "inpaint.ckpt").exists()
        assert (root / "train" / "loss_log.csv").exists()

    def test_missing_prerequisite(self, trained_run, tmp_path, capsys):
        _, ini, _ = trained_run
        code, _, err = run(capsys, "train", "--config", ini, "--data", str(tmp_path / "absent"),
                           "--out", str(tmp_path / "out"), "--quiet")
        assert code == 1
        assert "MISSING_PREREQUISITE" in err

    def test_inpaint(self, trained_run, tmp_path, capsys):
        root, _, config = trained_run
        image = os.path.join(config.data_dir, "images", "000000.png")
        code, out, _ = run(capsys, "inpaint", "--ckpt", str(root / "train" / "inpaint.ckpt"),
                           "--image", image, "--mask", "8,8,12,12", "--truth", image,
                           "--out", str(tmp_path / "restored"))
        assert code == 0
        assert json.loads(out)["mask"] == [8, 8, 12, 12]
        with Image.open(tmp_path / "restored" / "grid.png") as grid:
            assert grid.size == (128, 32)
        assert (tmp_path / "restored" / "composite.png").exists()

    def test_eval_pixel(self, trained_run, tmp_path, capsys):
        root, _, config = trained_run
        report = tmp_path / "pixel.json"
        code, _, _ = run(capsys, "eval-pixel", "--ckpt", str(root / "train" / "inpaint.ckpt"),
                         "--data", config.data_dir, "--out", str(report))
        assert code == 0
        data = json.loads(report.read_text(encoding="utf-8"))
        assert set(data["summary"]) == {"raw", "composited", "masked"}
        assert data["split"] == "test"

    def test_eval_retrieval(self, trained_run, tmp_path, capsys):
        root, _, config = trained_run
        report = tmp_path / "retrieval.json"
        code, out, _ = run(capsys, "eval-retrieval", "--ckpt", str(root / "train" / "inpaint.ckpt"),
                           "--corpus", config.data_dir, "--queries", config.data_dir,
                           "--k", "3", "--out", str(report), "--quiet")
        assert code == 0
        summary = json.loads(out)
        assert summary["k"] == 3
        assert 0.0 < summary["composited_map"] <= 1.0
        data = json.loads(report.read_text(encoding="utf-8"))
        assert 0.0 < data["map"] <= 1.0
        assert len(data["per_query_ap"]) == 2
        assert data["variant"] == "raw"
        assert data["composited"]["variant"] == "composited"
        assert len(data["composited"]["per_query_ap"]) == 2

    def test_malformed_checkpoint_fails_cleanly(self, trained_run, tmp_path, capsys):
        """構造の壊れたチェックポイントはトレースバックではなくエラー行で終わる"""
        _, _, config = trained_run
        header = json.dumps({"format_version": 1, "kind": "inpaint", "model_fingerprint": "x", "step": 1,
                             "seed": 0, "config": {}, "blocks": [{"name": "generator/w", "offset": 0}]})
        broken = tmp_path / "broken.ckpt"
        broken.write_bytes(MAGIC + struct.pack("<Q", len(header)) + header.encode("utf-8"))
        image = os.path.join(config.data_dir, "images", "000000.png")
        code, _, err = run(capsys, "inpaint", "--ckpt", str(broken), "--image", image,
                           "--mask", "8,8,12,12", "--out", str(tmp_path / "restored"))
        assert code == 1
        assert "CORRUPT_CHECKPOINT" in err

"""
Semantic Inpainting Lab - Test Configuration
"""
import os
import sys

import pytest

# srcディレクトリをパスに追加
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.data_loader import load_dataset
from src.synth import build_dataset
from src.training import pretrain_attribute, pretrain_segmentation, save_checkpoint
from tests.helpers import tiny_config


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False, help="較正用の長い学習テストも実行する")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: 較正用の長い学習（--run-slow のときだけ実行）")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip_slow = pytest.mark.skip(reason="--run-slow を指定したときだけ実行")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def tiny_pipeline(tmp_path_factory):
    """合成データ（d0, d1, d2）と1エポックだけ事前学習した Wa・Ws のチェックポイント"""
    root = tmp_path_factory.mktemp("pipeline")
    config = tiny_config(root)
    build_dataset(20, 0, (32, 32), config.data_dir, purpose="inpaint", progress=False)
    build_dataset(16, 0, (32, 32), config.attr_data_dir, purpose="attribute", progress=False)
    build_dataset(16, 0, (32, 32), config.seg_data_dir, purpose="segmentation", progress=False)
    attr_net, _ = pretrain_attribute(load_dataset(config.attr_data_dir), config)
    seg_net, _ = pretrain_segmentation(load_dataset(config.seg_data_dir), config)
    save_checkpoint(config.attr_ckpt, {"attr_net": attr_net}, config, kind="attribute", trained=True)
    save_checkpoint(config.seg_ckpt, {"seg_net": seg_net}, config, kind="segmentation", trained=True)
    return root, config

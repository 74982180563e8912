"""
Semantic Inpainting Lab - Generator Tests
"""
import pytest
import sys
import os

import torch

# srcディレクトリをパスに追加
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.core import one_hot
from src.errors import RejectedInputError
from src.nets import GeneratorNet, condition_fuse, inpaint
from tests.helpers import gradient_check


def inputs(batch=2, side=64, n_attributes=18, n_classes=4, dtype=torch.float32, seed=0):
    g = torch.Generator().manual_seed(seed)
    x = torch.rand(batch, 3, side, side, generator=g, dtype=dtype)
    seg = one_hot(torch.randint(0, n_classes, (batch, side, side), generator=g), n_classes).to(dtype)
    attr = torch.rand(batch, n_attributes, generator=g, dtype=dtype)
    return x, seg, attr


class TestConditionFuse:
    """condition_fuse関数のテスト"""

    def test_constant_feature(self):
        """特徴0・属性[1,0,1]なら全位置が (0,0,1,0,1)"""
        feature = torch.zeros(1, 2, 4, 4)
        fused = condition_fuse(feature, torch.tensor([[1.0, 0.0, 1.0]]))
        assert fused.shape == (1, 5, 4, 4)
        for i in range(4):
            for j in range(4):
                assert fused[0, :, i, j].tolist() == [0.0, 0.0, 1.0, 0.0, 1.0]

    def test_feature_channels_preserved(self):
        feature = torch.rand(2, 3, 4, 4)
        attr = torch.rand(2, 5)
        fused = condition_fuse(feature, attr)
        assert torch.equal(fused[:, :3], feature)
        assert torch.equal(fused[:, 3:, 2, 1], attr)

    def test_batch_mismatch(self):
        with pytest.raises(RejectedInputError, match="DIMENSION_MISMATCH"):
            condition_fuse(torch.zeros(2, 2, 4, 4), torch.zeros(3, 5))


class TestGeneratorNet:
    """GeneratorNet のテスト"""

    @pytest.fixture
    def net(self):
        torch.manual_seed(0)
        return GeneratorNet(channels=2)

    def test_output_shape_and_range(self, net):
        z = net(*inputs())
        assert z.shape == (2, 3, 64, 64)
        assert bool(((z > 0) & (z < 1)).all())

    def test_bottleneck_is_m1(self, net):
        """64px入力のボトルネックは16×16"""
        assert net.bottleneck(*inputs()).shape == (2, 8, 16, 16)

    def test_attributes_change_output(self, net):
        x, seg, attr = inputs(batch=1)
        with torch.no_grad():
            a = net(x, seg, torch.zeros_like(attr))
            b = net(x, seg, torch.ones_like(attr))
        assert not torch.equal(a, b)

    def test_bottleneck_receptive_field(self, net):
        """ボトルネック中央の1セルは入力の16×16以上の範囲を見ている"""
        x, seg, attr = inputs(batch=1)
        x = x.clone().requires_grad_(True)
        net.bottleneck(x, seg, attr)[:, :, 8, 8].sum().backward()
        support = x.grad.abs().sum(dim=(0, 1)) > 0
        rows = torch.nonzero(support.any(dim=1)).flatten()
        cols = torch.nonzero(support.any(dim=0)).flatten()
        assert int(rows.max() - rows.min()) + 1 >= 16
        assert int(cols.max() - cols.min()) + 1 >= 16

    def test_center_pixel_reaches_bottleneck(self, net):
        """入力中央の1画素を変えるとボトルネックの4×4セル（入力16×16相当）以上が変わる"""
        x, seg, attr = inputs(batch=1, dtype=torch.float64)
        net = net.double()
        perturbed = x.clone()
        perturbed[:, :, 32, 32] += 0.5
        with torch.no_grad():
            changed = (net.bottleneck(perturbed, seg, attr) - net.bottleneck(x, seg, attr)).abs().amax(dim=1)[0] > 0
        rows = torch.nonzero(changed.any(dim=1)).flatten()
        cols = torch.nonzero(changed.any(dim=0)).flatten()
        assert int(rows.max() - rows.min()) + 1 >= 4
        assert int(cols.max() - cols.min()) + 1 >= 4

    def test_zeroed_attribute_weights_ignore_attributes(self, net):
        """fusion の属性側の重みを0にすると出力は属性に依存しない"""
        with torch.no_grad():
            net.fusion.weight[:, net.fusion.in_channels - net.n_attributes:] = 0.0
            x, seg, attr = inputs(batch=2)
            a = net(x, seg, attr)
            b = net(x, seg, 1.0 - attr)
        assert torch.equal(a, b)

    def test_segmentation_channel_mismatch(self, net):
        x, seg, attr = inputs(n_classes=3)
        with pytest.raises(RejectedInputError, match="CHANNEL_MISMATCH"):
            net(x, seg, attr)

    def test_attribute_length_mismatch(self, net):
        x, seg, _ = inputs()
        with pytest.raises(RejectedInputError, match="DIMENSION_MISMATCH"):
            net(x, seg, torch.rand(2, 17))

    def test_non_square_rejected(self, net):
        x = torch.rand(1, 3, 32, 64)
        seg = torch.zeros(1, 4, 32, 64)
        with pytest.raises(RejectedInputError, match="DIMENSION_MISMATCH"):
            net(x, seg, torch.rand(1, 18))

    def test_gradient_check(self):
        """8×8入力の小型生成器で出力和の勾配を中心差分と比べる"""
        torch.manual_seed(3)
        net = GeneratorNet(n_attributes=3, n_classes=2, channels=1).double()
        x, seg, attr = inputs(batch=2, side=8, n_attributes=3, n_classes=2, dtype=torch.float64)
        passed = gradient_check(list(net.parameters()), lambda: net(x, seg, attr).sum())
        assert passed >= 0.95


class TestInpaint:
    """inpaint関数のテスト"""

    def test_single_image(self):
        torch.manual_seed(0)
        net = GeneratorNet(channels=2)
        x = torch.rand(3, 32, 32)
        seg = torch.zeros(32, 32, dtype=torch.long)
        z = inpaint(net, x, seg, torch.rand(18))
        assert z.shape == (3, 32, 32)

    def test_batch_matches_single(self):
        torch.manual_seed(0)
        net = GeneratorNet(channels=2)
        x = torch.rand(2, 3, 32, 32)
        seg = torch.randint(0, 4, (2, 32, 32))
        attr = torch.rand(2, 18)
        with torch.no_grad():
            batch = inpaint(net, x, seg, attr)
            single = inpaint(net, x[1], seg[1], attr[1])
        assert torch.allclose(batch[1], single, atol=1e-6)

    def test_segmentation_size_mismatch(self):
        net = GeneratorNet(channels=2)
        with pytest.raises(RejectedInputError, match="DIMENSION_MISMATCH"):
            inpaint(net, torch.rand(3, 32, 32), torch.zeros(16, 16, dtype=torch.long), torch.rand(18))

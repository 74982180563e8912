"""
Semantic Inpainting Lab - Raster Operation Tests
"""
import pytest
import sys
import os

import torch

# srcディレクトリをパスに追加
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.core import (
    Mask,
    apply_mask,
    composite,
    from_hwc,
    one_hot,
    spatial_replicate,
    stack_masks,
    to_hwc,
    to_uint8,
    validate_image,
)
from src.errors import RejectedInputError


class TestMask:
    """Mask型のテスト"""

    def test_bits_exactly_rectangle(self):
        bits = Mask(1, 2, 3, 4, (8, 8)).bits()
        assert bits.sum() == 12
        assert bits[1:4, 2:6].eq(1).all()

    def test_outside_canvas_rejected(self):
        with pytest.raises(RejectedInputError, match="MASK_OUT_OF_CANVAS"):
            Mask(6, 0, 4, 4, (8, 8))

    def test_empty_mask(self):
        assert Mask.empty((8, 8)).bits().sum() == 0

    def test_stack_shape(self):
        masks = stack_masks([Mask(0, 0, 2, 2, (8, 8)), Mask(4, 4, 2, 2, (8, 8))])
        assert masks.shape == (2, 1, 8, 8)


class TestApplyMask:
    """apply_mask関数のテスト"""

    def test_top_left_block(self):
        image = torch.ones(3, 4, 4)
        out = apply_mask(image, Mask(0, 0, 2, 2, (4, 4)))
        assert out[:, :2, :2].eq(0).all()
        assert out.sum() == 3 * (16 - 4)

    def test_zero_mask_identity(self):
        image = torch.rand(3, 8, 8, generator=torch.Generator().manual_seed(1))
        assert torch.equal(apply_mask(image, Mask.empty((8, 8))), image)

    def test_matches_select_oracle(self):
        g = torch.Generator().manual_seed(7)
        image = torch.rand(3, 8, 8, generator=g)
        mask = Mask(2, 3, 3, 3, (8, 8))
        out = apply_mask(image, mask)
        bits = mask.bits()
        for c in range(3):
            for i in range(8):
                for j in range(8):
                    expected = 0.0 if bits[i, j] == 1 else float(image[c, i, j])
                    assert float(out[c, i, j]) == expected

    def test_batch_masks(self):
        images = torch.ones(2, 3, 8, 8)
        masks = stack_masks([Mask(0, 0, 2, 2, (8, 8)), Mask(6, 6, 2, 2, (8, 8))])
        out = apply_mask(images, masks)
        assert out[0, :, :2, :2].eq(0).all() and out[0, :, 6:, 6:].eq(1).all()
        assert out[1, :, 6:, 6:].eq(0).all() and out[1, :, :2, :2].eq(1).all()

    def test_dimension_mismatch(self):
        with pytest.raises(RejectedInputError, match="DIMENSION_MISMATCH"):
            apply_mask(torch.ones(3, 16, 16), Mask(0, 0, 2, 2, (8, 8)))


class TestComposite:
    """composite関数のテスト"""

    def test_identity_when_equal(self):
        image = torch.rand(3, 8, 8, generator=torch.Generator().manual_seed(2))
        assert torch.equal(composite(image, image, Mask(1, 1, 4, 4, (8, 8))), image)

    def test_zero_mask_keeps_input(self):
        g = torch.Generator().manual_seed(3)
        restored, corrupted = torch.rand(3, 8, 8, generator=g), torch.rand(3, 8, 8, generator=g)
        assert torch.equal(composite(restored, corrupted, Mask.empty((8, 8))), corrupted)

    def test_matches_select_oracle(self):
        g = torch.Generator().manual_seed(4)
        restored, corrupted = torch.rand(3, 8, 8, generator=g), torch.rand(3, 8, 8, generator=g)
        mask = Mask(3, 1, 4, 5, (8, 8))
        out = composite(restored, corrupted, mask)
        bits = mask.bits()
        for c in range(3):
            for i in range(8):
                for j in range(8):
                    source = restored if bits[i, j] == 1 else corrupted
                    assert float(out[c, i, j]) == float(source[c, i, j])

    def test_mask_then_composite_restores_original(self):
        image = torch.rand(3, 8, 8, generator=torch.Generator().manual_seed(5))
        mask = Mask(2, 2, 4, 4, (8, 8))
        assert torch.equal(composite(image, apply_mask(image, mask), mask), image)

    def test_shape_mismatch(self):
        with pytest.raises(RejectedInputError, match="DIMENSION_MISMATCH"):
            composite(torch.zeros(3, 8, 8), torch.zeros(3, 4, 4), Mask.empty((8, 8)))


class TestOneHot:
    """one_hot関数のテスト"""

    def test_single_pixel(self):
        out = one_hot(torch.tensor([[2]]), 4)
        assert out[:, 0, 0].tolist() == [0.0, 0.0, 1.0, 0.0]

    def test_uniform_background(self):
        out = one_hot(torch.zeros(4, 4, dtype=torch.long), 3)
        assert out[0].eq(1).all() and out[1:].eq(0).all()

    def test_argmax_round_trip(self):
        labels = torch.randint(0, 5, (8, 8), generator=torch.Generator().manual_seed(6))
        out = one_hot(labels, 5)
        assert torch.equal(out.argmax(dim=0), labels)
        assert out.sum(dim=0).eq(1).all()

    def test_label_out_of_range(self):
        with pytest.raises(RejectedInputError, match="LABEL_OUT_OF_RANGE"):
            one_hot(torch.tensor([[0, 4]]), 4)


class TestSpatialReplicate:
    """spatial_replicate関数のテスト"""

    def test_small_grid(self):
        v = torch.tensor([0.2, 0.5, 0.9])
        grid = spatial_replicate(v, 2)
        assert grid.shape == (3, 2, 2)
        for i in range(2):
            for j in range(2):
                assert torch.equal(grid[:, i, j], v)

    def test_side_one(self):
        v = torch.tensor([0.1, 0.7])
        assert torch.equal(spatial_replicate(v, 1)[:, 0, 0], v)

    def test_slices_identical(self):
        v = torch.rand(18, generator=torch.Generator().manual_seed(8))
        grid = spatial_replicate(v, 16)
        assert torch.equal(grid, v[:, None, None].expand(18, 16, 16))

    def test_invalid_side(self):
        with pytest.raises(RejectedInputError):
            spatial_replicate(torch.zeros(3), 0)


class TestImageHelpers:
    """画像の検証・変換のテスト"""

    def test_validate_rejects_out_of_range(self):
        with pytest.raises(RejectedInputError, match="INVALID_IMAGE"):
            validate_image(torch.full((3, 8, 8), 1.5))

    def test_validate_rejects_side_not_multiple_of_4(self):
        with pytest.raises(RejectedInputError, match="INVALID_IMAGE"):
            validate_image(torch.zeros(3, 6, 8))

    def test_hwc_round_trip_8bit(self):
        image = torch.randint(0, 256, (3, 4, 4), generator=torch.Generator().manual_seed(9)).float() / 255.0
        assert torch.equal(from_hwc(to_uint8(to_hwc(image)) / 255.0), image)

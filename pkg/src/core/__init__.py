"""
Semantic Inpainting Lab - Core Package
共通の型とラスタ操作
"""
from .raster import (
    Mask,
    apply_mask,
    composite,
    one_hot,
    spatial_replicate,
    stack_masks,
    validate_image,
    to_hwc,
    from_hwc,
    to_uint8,
)

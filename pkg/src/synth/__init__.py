"""
Semantic Inpainting Lab - Synthetic Data Package
図形シーンの生成・マスク・データセット保存
"""
from .scene import (
    ATTRIBUTE_NAMES,
    ATTRIBUTE_INDEX,
    CLASS_NAMES,
    SHAPE_LABELS,
    LabeledSample,
    ObjectSpec,
    SceneSpec,
    attributes_from_scene,
    generate_scene,
    render_scene,
    sample_from_spec,
)
from .masks import sample_mask, center_mask
from .dataset import build_dataset

"""
Semantic Inpainting Lab - Networks Package
埋め込みネット・生成器・識別器
"""
from .embedding import (
    AttributeNet,
    SegmentationNet,
    extract_features,
    freeze,
    predict_attributes,
    predict_segmentation,
)
from .generator import GeneratorNet, condition_fuse, inpaint
from .discriminators import (
    AttributeDisc,
    GlobalDisc,
    MismatchSample,
    SegmentationDisc,
    sample_mismatched,
    score_attribute,
    score_global,
    score_segmentation,
)

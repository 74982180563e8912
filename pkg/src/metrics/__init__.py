"""
Semantic Inpainting Lab - Metrics Package
画素指標と検索ベースの評価
"""
from .pixel import MetricReport, hole_errors, mean_l1, mean_l2, metric_report, psnr, ssim
from .retrieval import (
    ProtocolResult,
    RetrievalCorpus,
    average_precision,
    build_corpus,
    retrieve,
    semantic_map_protocol,
)

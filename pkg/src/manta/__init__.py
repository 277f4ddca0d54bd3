"""Underwater single-object tracking downstream of detection.

Beer-Lambert augmentation, a dual-positive contrastive embedder, a Kalman/IoU
primary tracker, the vision-guided secondary association cascade and the
CSC/GAS/Success/Precision evaluation suite.
"""

from manta.geometry import (
    BBox,
    ScoreWeights,
    SimilarityThresholds,
    are_similar,
    composite_score,
    dist_score,
    iou,
    scale_score,
    size_ok,
)

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "ScoreWeights",
    "SimilarityThresholds",
    "are_similar",
    "composite_score",
    "dist_score",
    "iou",
    "scale_score",
    "size_ok",
]

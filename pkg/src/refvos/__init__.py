"""Keyframe propagation and pixel-vote fusion for referring video object segmentation."""

from refvos.dataset import ExpressionRecord, ResultsLayout, VideoRecord, load_meta, read_mask_png, write_mask_png, write_results
from refvos.errors import RefVOSError
from refvos.fusion import FusionConfig, FusionGroup, fuse_group, group_by_target
from refvos.keyframe import KeyframeChoice, select_keyframe
from refvos.masks import (
    BinaryMask,
    ConfidenceSeries,
    MaskSequence,
    VoteGrid,
    accumulate,
    intersection_count,
    pixel_count,
    threshold,
    union_count,
)
from refvos.metrics import BoundaryParams, SequenceScore, boundary_pixels, contour_accuracy, evaluate, region_similarity

__version__ = "0.1.0"

__all__ = [
    "BinaryMask",
    "BoundaryParams",
    "ConfidenceSeries",
    "ExpressionRecord",
    "FusionConfig",
    "FusionGroup",
    "KeyframeChoice",
    "MaskSequence",
    "RefVOSError",
    "ResultsLayout",
    "SequenceScore",
    "VideoRecord",
    "VoteGrid",
    "accumulate",
    "boundary_pixels",
    "contour_accuracy",
    "evaluate",
    "fuse_group",
    "group_by_target",
    "intersection_count",
    "load_meta",
    "pixel_count",
    "read_mask_png",
    "region_similarity",
    "select_keyframe",
    "threshold",
    "union_count",
    "write_mask_png",
    "write_results",
]

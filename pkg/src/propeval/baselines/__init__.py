"""The four reference proposal generators."""

from .segmentation import SegParams, num_segments, segment_boxes, segment_graph
from .sliding import sliding_window, window_sizes
from .stats import (
    BoxParamStats,
    box_params,
    estimate_box_stats,
    gaussian_params,
    params_to_boxes,
    sample_gaussian,
    sample_uniform,
    uniform_params,
)
from .superpixels import DEFAULT_SEG_PARAMS, superpixel_proposals

BASELINES = ("uniform", "gaussian", "sliding_window", "superpixels")

__all__ = [
    "BASELINES",
    "BoxParamStats",
    "DEFAULT_SEG_PARAMS",
    "SegParams",
    "box_params",
    "estimate_box_stats",
    "gaussian_params",
    "num_segments",
    "params_to_boxes",
    "sample_gaussian",
    "sample_uniform",
    "segment_boxes",
    "segment_graph",
    "sliding_window",
    "superpixel_proposals",
    "uniform_params",
    "window_sizes",
]

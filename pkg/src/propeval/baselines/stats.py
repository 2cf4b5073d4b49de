"""Box parameter statistics and the Uniform / Gaussian samplers.

A box is parameterised as (centre x, centre y, sqrt area, log aspect) with
aspect = width / height and natural log. With ``normalized`` statistics
the centre is divided by the image width/height and sqrt area by
sqrt(width * height), so one fit transfers across image sizes.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from ..data_io import GroundTruthSet, ImageProposals
from ..geometry import box_areas

logger = logging.getLogger(__name__)

PARAM_NAMES = ("cx", "cy", "sqrt_area", "log_aspect")
MIN_ANNOTATIONS = 10


@dataclass(frozen=True)
class BoxParamStats:
    lo: np.ndarray
    hi: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    normalized: bool = True

    def __post_init__(self) -> None:
        for name in ("lo", "hi", "mean"):
            arr = np.asarray(getattr(self, name), dtype=np.float64).reshape(4)
            object.__setattr__(self, name, arr)
        cov = np.asarray(self.cov, dtype=np.float64).reshape(4, 4)
        object.__setattr__(self, "cov", cov)
        if np.any(self.lo > self.hi):
            raise ValueError("stats range has lo > hi")
        if not np.allclose(cov, cov.T, atol=1e-12):
            raise ValueError("covariance is not symmetric")

    def to_dict(self) -> dict:
        return {
            "lo": self.lo.tolist(),
            "hi": self.hi.tolist(),
            "mean": self.mean.tolist(),
            "cov": self.cov.tolist(),
            "normalized": self.normalized,
        }

    @classmethod
    def from_dict(cls, d: dict) -> BoxParamStats:
        return cls(d["lo"], d["hi"], d["mean"], d["cov"], bool(d.get("normalized", True)))


def box_params(boxes: np.ndarray) -> np.ndarray:
    """``(N, 4)`` parameters of positive-area boxes."""
    b = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    w = b[:, 2] - b[:, 0]
    h = b[:, 3] - b[:, 1]
    return np.stack(
        [0.5 * (b[:, 0] + b[:, 2]), 0.5 * (b[:, 1] + b[:, 3]), np.sqrt(w * h), np.log(w / h)],
        axis=1,
    )


def params_to_boxes(params: np.ndarray) -> np.ndarray:
    """Inverse of :func:`box_params`: w = sqrt(A r), h = sqrt(A / r)."""
    p = np.asarray(params, dtype=np.float64).reshape(-1, 4)
    half_w = 0.5 * p[:, 2] * np.exp(0.5 * p[:, 3])
    half_h = 0.5 * p[:, 2] * np.exp(-0.5 * p[:, 3])
    return np.stack([p[:, 0] - half_w, p[:, 1] - half_h, p[:, 0] + half_w, p[:, 1] + half_h], axis=1)


def _scale(width: float, height: float) -> np.ndarray:
    return np.array([width, height, math.sqrt(width * height), 1.0])


def trimmed_range(values: np.ndarray, trim: float) -> tuple[float, float]:
    """Drop ``floor(trim * N)`` values from each end of the sorted data."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    cut = int(math.floor(trim * len(v) + 1e-9))
    return float(v[cut]), float(v[len(v) - 1 - cut])


def estimate_box_stats(gt: GroundTruthSet, trim: float = 0.005, normalized: bool = True) -> BoxParamStats:
    """Fit trimmed parameter ranges and a Gaussian to training annotations.

    Ranges come from the trimmed data; mean and covariance use all of it.
    Zero-area annotations are skipped.
    """
    if not 0 <= trim < 0.5:
        raise ValueError("trim must lie in [0, 0.5)")
    rows = []
    skipped = 0
    for ann in gt.images.values():
        if not len(ann):
            continue
        ok = box_areas(ann.boxes) > 0
        skipped += int((~ok).sum())
        p = box_params(ann.boxes[ok])
        if normalized:
            p = p / _scale(ann.width, ann.height)
        rows.append(p)
    if skipped:
        logger.warning("skipped %d zero-area annotations", skipped)
    params = np.concatenate(rows) if rows else np.zeros((0, 4))
    if len(params) < MIN_ANNOTATIONS:
        raise ValueError(f"need at least {MIN_ANNOTATIONS} annotations to fit box statistics, got {len(params)}")
    ranges = [trimmed_range(params[:, j], trim) for j in range(4)]
    lo = np.array([r[0] for r in ranges])
    hi = np.array([r[1] for r in ranges])
    mean = params.mean(axis=0)
    centred = params - mean
    cov = centred.T @ centred / max(len(params) - 1, 1)
    cov = 0.5 * (cov + cov.T)
    return BoxParamStats(lo, hi, mean, cov, normalized)


def _denormalize(params: np.ndarray, stats: BoxParamStats, width: float, height: float) -> np.ndarray:
    return params * _scale(width, height) if stats.normalized else params


def params_to_image_boxes(params: np.ndarray, width: float, height: float) -> np.ndarray:
    """Convert parameters to boxes clipped to the image.

    Centres are clamped into the image and sides kept at least one pixel
    wide before clipping, so every box has positive area.
    """
    p = np.array(params, dtype=np.float64).reshape(-1, 4)
    p[:, 0] = np.clip(p[:, 0], 0.0, width)
    p[:, 1] = np.clip(p[:, 1], 0.0, height)
    boxes = params_to_boxes(p)
    cx, cy = p[:, 0], p[:, 1]
    half_w = np.maximum(0.5 * (boxes[:, 2] - boxes[:, 0]), 0.5)
    half_h = np.maximum(0.5 * (boxes[:, 3] - boxes[:, 1]), 0.5)
    half_w = np.where(np.isfinite(half_w), half_w, width)
    half_h = np.where(np.isfinite(half_h), half_h, height)
    boxes = np.stack([cx - half_w, cy - half_h, cx + half_w, cy + half_h], axis=1)
    return np.clip(boxes, 0.0, [width, height, width, height])


def uniform_params(stats: BoxParamStats, width: float, height: float, n: int, seed) -> np.ndarray:
    """Unclipped parameter draws, independent and uniform over the ranges."""
    rng = np.random.default_rng(seed)
    u = rng.random((n, 4))
    params = stats.lo + u * (stats.hi - stats.lo)
    return _denormalize(params, stats, width, height)


def gaussian_params(stats: BoxParamStats, width: float, height: float, n: int, seed) -> np.ndarray:
    """Unclipped draws from N(mean, cov) via the symmetric square root of cov."""
    rng = np.random.default_rng(seed)
    vals, vecs = np.linalg.eigh(stats.cov)
    root = (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T
    z = rng.standard_normal((n, 4))
    params = stats.mean + z @ root
    return _denormalize(params, stats, width, height)


def sample_uniform(stats: BoxParamStats, width: float, height: float, n: int, seed, image_id: str = "") -> ImageProposals:
    boxes = params_to_image_boxes(uniform_params(stats, width, height, n, seed), width, height)
    return ImageProposals(image_id, boxes, None, float(width), float(height))


def sample_gaussian(stats: BoxParamStats, width: float, height: float, n: int, seed, image_id: str = "") -> ImageProposals:
    boxes = params_to_image_boxes(gaussian_params(stats, width, height, n, seed), width, height)
    return ImageProposals(image_id, boxes, None, float(width), float(height))

"""Batch drivers: run baselines and repeatability over many images.

Work is split into per-image units and mapped over a thread pool; results
are reduced in input order, so output never depends on the pool size.
"""

from __future__ import annotations

import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

from .baselines import BoxParamStats, sample_gaussian, sample_uniform, sliding_window, superpixel_proposals
from .baselines.superpixels import DEFAULT_SEG_PARAMS
from .data_io import ImageProposals, select_image
from .evaluation import RepeatabilityResult, evaluate_repeatability
from .geometry import size_bin_edges
from .perturbations import MAX_ROTATION, PerturbationSpec, apply_perturbation, rotation_crop

T = TypeVar("T")
R = TypeVar("R")

STOCHASTIC = ("uniform", "gaussian")
THREADS_ENV = "PROPEVAL_THREADS"


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def parallel_map(func: Callable[[T], R], items: Iterable[T], threads: int = 1) -> list[R]:
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [func(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items))


def derive_seed(seed: int, *keys: str) -> np.random.SeedSequence:
    """Seed stream for one work unit, independent of scheduling."""
    return np.random.SeedSequence([int(seed)] + [zlib.crc32(k.encode("utf-8")) for k in keys])


def generate(
    method: str,
    image: np.ndarray,
    n: int,
    image_id: str = "",
    seed=None,
    stats: BoxParamStats | None = None,
    seg_params=DEFAULT_SEG_PARAMS,
) -> ImageProposals:
    h, w = image.shape[:2]
    if method == "sliding_window":
        return sliding_window(w, h, n, image_id)
    if method == "superpixels":
        return select_image(superpixel_proposals(image, seg_params, image_id), n, "first-n")
    if method in STOCHASTIC:
        if stats is None:
            raise ValueError(f"{method} baseline needs box statistics")
        if seed is None:
            raise ValueError(f"{method} baseline needs a seed")
        sampler = sample_uniform if method == "uniform" else sample_gaussian
        return sampler(stats, w, h, n, seed, image_id)
    raise ValueError(f"unknown baseline {method!r}")


def image_repeatability(
    image: np.ndarray,
    image_id: str,
    method: str,
    specs: Sequence[PerturbationSpec],
    n: int = 1000,
    seed: int | None = None,
    stats: BoxParamStats | None = None,
    hull: bool = False,
    max_angle: float = MAX_ROTATION,
    generator: Callable | None = None,
) -> list[RepeatabilityResult]:
    """Repeatability of a built-in generator on one image for each spec.

    Stochastic baselines draw the reference and every perturbed image from
    separate seed streams, as an unseeded method would.
    """
    h, w = image.shape[:2]
    crop = rotation_crop(w, h, max_angle)
    edges = size_bin_edges(w, h)

    def run(img: np.ndarray, key: str) -> ImageProposals:
        if generator is not None:
            return generator(img, image_id)
        s = derive_seed(seed, image_id, key) if seed is not None else None
        return generate(method, img, n, image_id, s, stats)

    ref = run(image, "reference")
    ref = ImageProposals(image_id, ref.boxes, ref.scores, float(w), float(h))
    out = []
    for spec in specs:
        pert = run(apply_perturbation(image, spec, crop), str(spec))
        out.append(evaluate_repeatability(ref, pert, spec, crop if spec.kind == "rotation" else None, (w, h), edges, hull=hull))
    return out


def merge_by_spec(per_image: Sequence[Sequence[RepeatabilityResult]]) -> list[RepeatabilityResult]:
    if not per_image:
        return []
    return [RepeatabilityResult.merge([row[k] for row in per_image]) for k in range(len(per_image[0]))]

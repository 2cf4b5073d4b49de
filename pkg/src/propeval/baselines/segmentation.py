"""Graph-based image segmentation (Felzenszwalb & Huttenlocher, 2004).

Pixels are nodes of an 8-connected grid graph weighted by the Euclidean
RGB distance of the pre-smoothed image. Edges are processed in ascending
order and two components merge when the edge weight does not exceed
either component's internal difference plus ``k / size``. A final pass
folds components below ``min_size`` into a neighbour, visiting edges in
the same ascending order so each small component joins its most similar
neighbour.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..imaging import gaussian_filter


@dataclass(frozen=True)
class SegParams:
    sigma: float = 0.8
    k: float = 300.0
    min_size: int = 20

    def __post_init__(self) -> None:
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.k <= 0:
            raise ValueError("k must be > 0")
        if self.min_size < 1:
            raise ValueError("min_size must be >= 1")


def grid_edges(image: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Endpoints and weights of the 8-connected grid graph, unsorted."""
    h, w = image.shape[:2]
    idx = np.arange(h * w).reshape(h, w)
    pairs = (
        (idx[:, :-1], idx[:, 1:], image[:, :-1], image[:, 1:]),  # right
        (idx[:-1, :], idx[1:, :], image[:-1, :], image[1:, :]),  # down
        (idx[:-1, :-1], idx[1:, 1:], image[:-1, :-1], image[1:, 1:]),  # down-right
        (idx[1:, :-1], idx[:-1, 1:], image[1:, :-1], image[:-1, 1:]),  # up-right
    )
    a = np.concatenate([p[0].ravel() for p in pairs])
    b = np.concatenate([p[1].ravel() for p in pairs])
    wt = np.concatenate([np.sqrt(((p[2] - p[3]) ** 2).sum(axis=-1)).ravel() for p in pairs])
    return a, b, wt


def _find(parent: list[int], x: int) -> int:
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        parent[x], x = root, parent[x]
    return root


def segment_graph(image: np.ndarray, params: SegParams = SegParams()) -> np.ndarray:
    """Label map ``(H, W)`` of int64 component ids.

    Ids are consecutive from 0 in raster order of each component's first
    pixel.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    h, w = img.shape[:2]
    if h == 0 or w == 0:
        raise ValueError("cannot segment an empty image")
    smooth = gaussian_filter(img, params.sigma, int(math.ceil(4.0 * params.sigma)), mode="nearest")
    a, b, wt = grid_edges(smooth)
    order = np.argsort(wt, kind="stable")
    ea, eb, ew = a[order].tolist(), b[order].tolist(), wt[order].tolist()

    n = h * w
    k = float(params.k)
    parent = list(range(n))
    rank = [0] * n
    size = [1] * n
    thresh = [k] * n
    for u, v, wgt in zip(ea, eb, ew):
        ru = _find(parent, u)
        rv = _find(parent, v)
        if ru == rv or wgt > thresh[ru] or wgt > thresh[rv]:
            continue
        if rank[ru] < rank[rv]:
            ru, rv = rv, ru
        parent[rv] = ru
        size[ru] += size[rv]
        if rank[ru] == rank[rv]:
            rank[ru] += 1
        thresh[ru] = wgt + k / size[ru]

    min_size = params.min_size
    if min_size > 1:
        for u, v in zip(ea, eb):
            ru = _find(parent, u)
            rv = _find(parent, v)
            if ru != rv and (size[ru] < min_size or size[rv] < min_size):
                if rank[ru] < rank[rv]:
                    ru, rv = rv, ru
                parent[rv] = ru
                size[ru] += size[rv]
                if rank[ru] == rank[rv]:
                    rank[ru] += 1

    roots = np.fromiter((_find(parent, i) for i in range(n)), dtype=np.int64, count=n)
    _, first, inverse = np.unique(roots, return_index=True, return_inverse=True)
    # renumber so ids follow the raster position of each component's first pixel
    rank_of = np.argsort(np.argsort(first))
    return rank_of[inverse].reshape(h, w)


def num_segments(labels: np.ndarray) -> int:
    return int(labels.max()) + 1 if labels.size else 0


def segment_boxes(labels: np.ndarray) -> np.ndarray:
    """Tight continuous bounding box of every segment, ordered by label."""
    h, w = labels.shape
    n = num_segments(labels)
    ys, xs = np.indices((h, w))
    flat = labels.ravel()
    x0 = np.full(n, w, dtype=np.int64)
    y0 = np.full(n, h, dtype=np.int64)
    x1 = np.full(n, -1, dtype=np.int64)
    y1 = np.full(n, -1, dtype=np.int64)
    np.minimum.at(x0, flat, xs.ravel())
    np.minimum.at(y0, flat, ys.ravel())
    np.maximum.at(x1, flat, xs.ravel())
    np.maximum.at(y1, flat, ys.ravel())
    return np.stack([x0, y0, x1 + 1, y1 + 1], axis=1).astype(np.float64)

"""Content-independent sliding-window proposals on a power-of-two size grid."""

from __future__ import annotations

import math

import numpy as np

from ..data_io import ImageProposals

SIDE_EXPONENTS = range(4, 10)  # 16 .. 512 px


def window_sizes(width: float, height: float) -> list[tuple[int, int]]:
    """Window (w, h) pairs fitting the image, largest area first."""
    sides = [2**e for e in SIDE_EXPONENTS]
    sizes = [(w, h) for w in sides for h in sides if w <= width and h <= height]
    return sorted(sizes, key=lambda s: (-s[0] * s[1], -s[0]))


def _offsets(span: float, count: int) -> np.ndarray:
    if count <= 1:
        return np.array([math.floor(span / 2.0)])
    return np.unique(np.rint(np.linspace(0.0, span, count)))


def sliding_window(width: float, height: float, n: int, image_id: str = "") -> ImageProposals:
    """Place at most ``n`` windows on regular grids, one grid per size.

    The budget is split evenly across sizes (remainder to the largest
    sizes). Each size gets ``ceil(sqrt(m W / H)) x ceil(sqrt(m H / W))``
    pixel-aligned top-left positions spanning all valid offsets, read in
    raster order and truncated to its share ``m``.
    """
    if n < 1:
        raise ValueError("sliding window needs n >= 1")
    sizes = window_sizes(width, height)
    rows = []
    if sizes:
        base, extra = divmod(n, len(sizes))
        for i, (w, h) in enumerate(sizes):
            m = base + (1 if i < extra else 0)
            if m == 0:
                continue
            nx = math.ceil(math.sqrt(m * width / height))
            ny = math.ceil(math.sqrt(m * height / width))
            xs = _offsets(width - w, nx)
            ys = _offsets(height - h, ny)
            gx, gy = np.meshgrid(xs, ys)
            tl = np.stack([gx.ravel(), gy.ravel()], axis=1)[:m]
            rows.append(np.concatenate([tl, tl + [w, h]], axis=1))
    boxes = np.concatenate(rows) if rows else np.zeros((0, 4))
    return ImageProposals(image_id, boxes, None, float(width), float(height))

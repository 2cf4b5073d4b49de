"""Synthetic scenes shared by the tests and the bundled mini dataset."""

from __future__ import annotations

import numpy as np

CLASSES = ("block", "disc")


def scene(seed: int, width: int = 120, height: int = 90, n_objects: int = 4):
    """Smooth background with a few flat-coloured objects.

    Returns ``(image, boxes, labels)`` where boxes are the tight
    ``[x0, y0, x1, y1]`` extents of each object (later ones may occlude).
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    base = rng.uniform(40, 200, size=3)
    slope = rng.uniform(-0.6, 0.6, size=(3, 2))
    img = base[None, None, :] + xx[..., None] * slope[:, 0] + yy[..., None] * slope[:, 1]
    boxes, labels = [], []
    for _ in range(n_objects):
        w = int(rng.integers(max(8, width // 8), width // 2))
        h = int(rng.integers(max(8, height // 8), height // 2))
        x0 = int(rng.integers(0, width - w))
        y0 = int(rng.integers(0, height - h))
        color = rng.uniform(0, 255, size=3)
        if rng.random() < 0.5:
            img[y0 : y0 + h, x0 : x0 + w] = color
            labels.append("block")
        else:
            cy, cx = y0 + (h - 1) / 2, x0 + (w - 1) / 2
            mask = ((yy - cy) / (h / 2)) ** 2 + ((xx - cx) / (w / 2)) ** 2 <= 1.0
            img[mask] = color
            labels.append("disc")
        boxes.append([x0, y0, x0 + w, y0 + h])
    img += rng.normal(0, 3.0, size=img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8), np.asarray(boxes, dtype=float), labels


def random_boxes(rng: np.random.Generator, n: int, width: float = 100, height: float = 100, integer: bool = False) -> np.ndarray:
    a = rng.uniform(0, width, size=(n, 2))
    b = rng.uniform(0, height, size=(n, 2))
    if integer:
        a, b = np.floor(a), np.floor(b)
    x0, x1 = a.min(axis=1), a.max(axis=1)
    y0, y1 = b.min(axis=1), b.max(axis=1)
    x1 = np.where(x1 == x0, x0 + 1, x1)
    y1 = np.where(y1 == y0, y0 + 1, y1)
    return np.stack([x0, y0, x1, y1], axis=1)

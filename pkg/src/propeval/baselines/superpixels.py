"""Every low-level segment's bounding box as a proposal."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..data_io import ImageProposals
from .segmentation import SegParams, segment_boxes, segment_graph

DEFAULT_SEG_PARAMS = tuple(SegParams(sigma=0.8, k=k, min_size=20) for k in (100.0, 200.0, 300.0, 400.0))


def superpixel_proposals(
    image: np.ndarray,
    params: Sequence[SegParams] = DEFAULT_SEG_PARAMS,
    image_id: str = "",
) -> ImageProposals:
    if not params:
        raise ValueError("need at least one segmentation setting")
    h, w = image.shape[:2]
    seen = set()
    rows = []
    for p in params:
        for box in segment_boxes(segment_graph(image, p)):
            key = tuple(box.tolist())
            if key not in seen:
                seen.add(key)
                rows.append(box)
    boxes = np.asarray(rows, dtype=np.float64).reshape(-1, 4)
    return ImageProposals(image_id, boxes, None, float(w), float(h))

"""Box and polygon geometry: IoU, greedy matching, recall curves and size bins.

Boxes are continuous pixel rectangles ``(x0, y0, x1, y1)`` with width
``x1 - x0``. Batched routines take ``(N, 4)`` box arrays and ``(N, 4, 2)``
quad arrays; the dataclasses below are the single-item API.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

NUM_SIZE_BINS = 10
MIN_BIN_SIDE = 10.0

# Vectorised quad clipping works on this many (quad, box) pairs at a time.
_PAIR_CHUNK = 16384


@dataclass(frozen=True)
class BoundingBox:
    x0: float
    y0: float
    x1: float
    y1: float
    score: float | None = None

    def __post_init__(self) -> None:
        coords = (self.x0, self.y0, self.x1, self.y1)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"non-finite box coordinates {coords}")
        if self.x1 < self.x0 or self.y1 < self.y0:
            raise ValueError(f"negative box extent {coords}")

    @classmethod
    def from_array(cls, values: Sequence[float], score: float | None = None) -> BoundingBox:
        x0, y0, x1, y1 = (float(v) for v in values[:4])
        return cls(x0, y0, x1, y1, score)

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))

    def sqrt_area(self) -> float:
        return math.sqrt(self.area)

    def log_aspect(self) -> float:
        """Natural log of width / height; undefined for zero-area boxes."""
        if self.width <= 0 or self.height <= 0:
            raise ValueError("log aspect of a degenerate box")
        return math.log(self.width / self.height)

    def as_array(self) -> np.ndarray:
        return np.array([self.x0, self.y0, self.x1, self.y1], dtype=np.float64)

    def corners(self) -> np.ndarray:
        """Corners with positive shoelace orientation."""
        return np.array(
            [[self.x0, self.y0], [self.x1, self.y0], [self.x1, self.y1], [self.x0, self.y1]],
            dtype=np.float64,
        )


@dataclass(frozen=True)
class Quad:
    """Convex quadrilateral, stored with non-negative signed area."""

    vertices: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        pts = np.asarray(self.vertices, dtype=np.float64)
        if pts.shape != (4, 2) or not np.all(np.isfinite(pts)):
            raise ValueError(f"quad needs four finite 2-d vertices, got {self.vertices!r}")
        if polygon_area(pts) < 0:
            pts = pts[::-1]
        if not _is_convex(pts):
            raise ValueError(f"quad is not convex: {pts.tolist()}")
        object.__setattr__(self, "vertices", tuple((float(x), float(y)) for x, y in pts))

    @classmethod
    def from_box(cls, box: BoundingBox) -> Quad:
        return cls(tuple(map(tuple, box.corners())))

    @property
    def points(self) -> np.ndarray:
        return np.asarray(self.vertices, dtype=np.float64)

    @property
    def area(self) -> float:
        return polygon_area(self.points)

    def centroid(self) -> tuple[float, float]:
        """Vertex mean (the projected box centre for rotated rectangles)."""
        p = self.points.mean(axis=0)
        return (float(p[0]), float(p[1]))

    def hull(self) -> BoundingBox:
        p = self.points
        return BoundingBox(p[:, 0].min(), p[:, 1].min(), p[:, 0].max(), p[:, 1].max())


@dataclass(frozen=True)
class MatchResult:
    """One-to-one pairs ``(index_in_a, index_in_b, iou)`` by descending IoU."""

    pairs: tuple[tuple[int, int, float], ...] = ()

    def __len__(self) -> int:
        return len(self.pairs)

    def best_ious_b(self, n_b: int) -> np.ndarray:
        """IoU of each ``b`` element's partner, 0 when unmatched."""
        out = np.zeros(n_b, dtype=np.float64)
        for _, j, v in self.pairs:
            out[j] = v
        return out

    def best_ious_a(self, n_a: int) -> np.ndarray:
        out = np.zeros(n_a, dtype=np.float64)
        for i, _, v in self.pairs:
            out[i] = v
        return out


@dataclass(frozen=True)
class RecallCurve:
    thresholds: np.ndarray
    recall: np.ndarray
    auc: float
    count: int = field(default=0)

    def at(self, threshold: float) -> float:
        """Recall at a grid threshold."""
        idx = np.flatnonzero(np.isclose(self.thresholds, threshold, atol=1e-9))
        if idx.size == 0:
            raise KeyError(f"threshold {threshold} not on the curve grid")
        return float(self.recall[idx[0]])


# ---- areas and clipping ------------------------------------------------------


def polygon_area(points: np.ndarray) -> float:
    """Signed shoelace area."""
    p = np.asarray(points, dtype=np.float64)
    if len(p) < 3:
        return 0.0
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _is_convex(points: np.ndarray, eps: float = 1e-9) -> bool:
    d1 = np.roll(points, -1, axis=0) - points
    d2 = np.roll(d1, -1, axis=0)
    cross = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    scale = max(1.0, float(np.abs(points).max()) ** 2)
    return bool(np.all(cross >= -eps * scale))


def clip_polygon_to_box(points: np.ndarray, box: BoundingBox) -> np.ndarray:
    """Sutherland-Hodgman clip of a polygon against the four half-planes of ``box``."""
    out = [tuple(p) for p in np.asarray(points, dtype=np.float64)]
    # (axis, bound, keep side): x >= x0, x <= x1, y >= y0, y <= y1
    planes = ((0, box.x0, 1.0), (0, box.x1, -1.0), (1, box.y0, 1.0), (1, box.y1, -1.0))
    for axis, bound, side in planes:
        if not out:
            break
        src, out = out, []
        s = src[-1]
        ds = side * (s[axis] - bound)
        for e in src:
            de = side * (e[axis] - bound)
            if de >= 0:
                if ds < 0:
                    out.append(_crossing(s, e, ds, de))
                out.append(e)
            elif ds >= 0:
                out.append(_crossing(s, e, ds, de))
            s, ds = e, de
    return np.asarray(out, dtype=np.float64).reshape(-1, 2)


def _crossing(s, e, ds: float, de: float) -> tuple[float, float]:
    t = ds / (ds - de)
    return (s[0] + t * (e[0] - s[0]), s[1] + t * (e[1] - s[1]))


# ---- IoU ---------------------------------------------------------------------


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    inter = iw * ih if iw > 0 and ih > 0 else 0.0
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


def quad_box_iou(q: Quad, b: BoundingBox) -> float:
    inter = polygon_area(clip_polygon_to_box(q.points, b))
    inter = max(inter, 0.0)
    union = q.area + b.area - inter
    if union <= 0:
        return 0.0
    return min(inter / union, 1.0)


def box_areas(boxes: np.ndarray) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    return (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between box arrays, shape ``(len(a), len(b))``."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
    union = box_areas(a)[:, None] + box_areas(b)[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
    return out


def quads_area(quads: np.ndarray) -> np.ndarray:
    q = np.asarray(quads, dtype=np.float64)
    x, y = q[..., 0], q[..., 1]
    return 0.5 * np.sum(x * np.roll(y, -1, axis=-1) - np.roll(x, -1, axis=-1) * y, axis=-1)


def quad_hulls(quads: np.ndarray) -> np.ndarray:
    q = np.asarray(quads, dtype=np.float64).reshape(-1, 4, 2)
    return np.concatenate([q.min(axis=1), q.max(axis=1)], axis=1)


def _clip_batch(pts: np.ndarray, boxes: np.ndarray) -> np.ndarray:
    """Clip many convex polygons, each against its own box.

    Each half-plane keeps the vertex count fixed at ``n + 1``: every edge
    emits its end point (projected onto the clip line when outside) and
    the single entering crossing of a convex polygon is inserted before
    it. Projected runs are collinear with the clip line, so shoelace
    areas stay exact. Pairs without an entering crossing repeat a vertex.
    """
    planes = ((0, 0, 1.0), (0, 2, -1.0), (1, 1, 1.0), (1, 3, -1.0))
    rows = np.arange(pts.shape[0])
    for axis, col, side in planes:
        n = pts.shape[1]
        bound = boxes[:, col][:, None]
        e = pts
        s = np.roll(pts, 1, axis=1)
        de = side * (e[..., axis] - bound)
        ds = side * (s[..., axis] - bound)
        e_in = de >= 0
        s_in = ds >= 0
        denom = ds - de
        t = np.where(e_in != s_in, ds / np.where(denom == 0, 1.0, denom), 0.0)
        cross = s + (e - s) * t[..., None]
        out_pt = e.copy()
        out_pt[..., axis] = np.where(e_in, e[..., axis], bound)
        out_pt = np.where((s_in & ~e_in)[..., None], cross, out_pt)
        entering = e_in & ~s_in
        has = entering.any(axis=1)
        k = np.where(has, np.argmax(entering, axis=1), n)
        pos = np.arange(n + 1)[None, :]
        src = np.where(pos > k[:, None], pos - 1, pos)
        src = np.minimum(src, n - 1)
        nxt = out_pt[rows[:, None], src]
        ins = cross[rows, np.minimum(k, n - 1)]
        ins = np.where(has[:, None], ins, out_pt[:, n - 1])
        nxt[rows, k] = ins
        pts = nxt
    return pts


def _boxes_in_quads(boxes: np.ndarray, quads: np.ndarray) -> np.ndarray:
    """Whether each box lies inside its paired convex, positively oriented quad."""
    corners = boxes[:, [0, 1, 2, 1, 2, 3, 0, 3]].reshape(-1, 4, 2)
    inside = np.ones(len(boxes), dtype=bool)
    for k in range(4):
        a = quads[:, k][:, None, :]
        d = quads[:, (k + 1) % 4][:, None, :] - a
        rel = corners - a
        inside &= np.all(d[..., 0] * rel[..., 1] - d[..., 1] * rel[..., 0] >= 0, axis=1)
    return inside


def quad_iou_matrix(quads: np.ndarray, boxes: np.ndarray) -> np.ndarray:
    """Pairwise polygon IoU between convex quads ``(N, 4, 2)`` and boxes ``(M, 4)``."""
    quads = np.array(quads, dtype=np.float64).reshape(-1, 4, 2)
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    out = np.zeros((len(quads), len(boxes)), dtype=np.float64)
    if out.size == 0:
        return out
    clockwise = quads_area(quads) < 0
    quads[clockwise] = quads[clockwise, ::-1]
    hulls = quad_hulls(quads)
    overlap = (
        (np.minimum(hulls[:, None, 2], boxes[None, :, 2]) > np.maximum(hulls[:, None, 0], boxes[None, :, 0]))
        & (np.minimum(hulls[:, None, 3], boxes[None, :, 3]) > np.maximum(hulls[:, None, 1], boxes[None, :, 1]))
    )
    qi, bi = np.nonzero(overlap)
    q_area = np.abs(quads_area(quads))
    b_area = box_areas(boxes)
    for start in range(0, len(qi), _PAIR_CHUNK):
        sl = slice(start, start + _PAIR_CHUNK)
        q, b = quads[qi[sl]], boxes[bi[sl]]
        h = hulls[qi[sl]]
        # containment needs no clipping: the intersection is the inner region
        quad_in_box = (h[:, 0] >= b[:, 0]) & (h[:, 1] >= b[:, 1]) & (h[:, 2] <= b[:, 2]) & (h[:, 3] <= b[:, 3])
        box_in_quad = _boxes_in_quads(b, q)
        inter = np.where(quad_in_box, q_area[qi[sl]], b_area[bi[sl]])
        rest = ~(quad_in_box | box_in_quad)
        if rest.any():
            inter[rest] = np.maximum(quads_area(_clip_batch(q[rest], b[rest])), 0.0)
        union = q_area[qi[sl]] + b_area[bi[sl]] - inter
        vals = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
        out[qi[sl], bi[sl]] = np.minimum(vals, 1.0)
    return out


Region = Union[BoundingBox, Quad]


def pairwise_iou(a, b, hull: bool = False) -> np.ndarray:
    """IoU matrix for ``a`` given as boxes, quads, or a list of either.

    ``hull=True`` replaces every quad by its axis-aligned bounding box.
    """
    b_arr = _boxes_array(b)
    if isinstance(a, np.ndarray):
        if a.ndim == 3:
            if hull:
                return iou_matrix(quad_hulls(a), b_arr)
            return quad_iou_matrix(a, b_arr)
        return iou_matrix(a, b_arr)
    items = list(a)
    out = np.zeros((len(items), len(b_arr)), dtype=np.float64)
    is_quad = np.array([isinstance(x, Quad) for x in items], dtype=bool)
    if (~is_quad).any():
        idx = np.flatnonzero(~is_quad)
        out[idx] = iou_matrix(_boxes_array([items[i] for i in idx]), b_arr)
    if is_quad.any():
        idx = np.flatnonzero(is_quad)
        quads = np.stack([items[i].points for i in idx])
        out[idx] = iou_matrix(quad_hulls(quads), b_arr) if hull else quad_iou_matrix(quads, b_arr)
    return out


def _boxes_array(boxes) -> np.ndarray:
    if isinstance(boxes, np.ndarray):
        return boxes.astype(np.float64, copy=False).reshape(-1, 4)
    items = list(boxes)
    if not items:
        return np.zeros((0, 4), dtype=np.float64)
    return np.array([[x.x0, x.y0, x.x1, x.y1] for x in items], dtype=np.float64)


# ---- matching ----------------------------------------------------------------


def greedy_match_ious(ious: np.ndarray) -> MatchResult:
    """Greedy one-to-one assignment from a precomputed IoU matrix.

    Pairs with IoU > 0 are visited by descending IoU, ties broken by smaller
    row then smaller column index; a pair is kept when both ends are free.
    Candidates are sorted in tiers of the largest values so that the sweep,
    which usually ends early, never sorts the whole matrix.
    """
    ious = np.asarray(ious, dtype=np.float64)
    if ious.size == 0:
        return MatchResult()
    n_cols = ious.shape[1]
    flat = ious.ravel()
    cand = np.flatnonzero(flat > 0)
    vals = flat[cand]
    used_a = bytearray(ious.shape[0])
    used_b = bytearray(n_cols)
    limit = min(ious.shape)
    tier = 8 * limit
    pairs = []
    while cand.size:
        if cand.size > tier:
            # everything tied with the cut value goes into this tier
            cut = np.partition(vals, cand.size - tier)[cand.size - tier]
            head = vals >= cut
        else:
            head = np.ones(cand.size, dtype=bool)
        hc, hv = cand[head], vals[head]
        # flat indices are ascending, so a stable sort keeps (row, col) order on ties
        order = np.argsort(-hv, kind="stable")
        for f, v in zip(hc[order].tolist(), hv[order].tolist()):
            i, j = divmod(f, n_cols)
            if used_a[i] or used_b[j]:
                continue
            used_a[i] = used_b[j] = 1
            pairs.append((i, j, v))
            if len(pairs) == limit:
                return MatchResult(tuple(pairs))
        cand, vals = cand[~head], vals[~head]
        tier *= 4
    return MatchResult(tuple(pairs))


def greedy_match(a, b, hull: bool = False) -> MatchResult:
    """Greedily match regions ``a`` (boxes or quads) to boxes ``b`` by IoU."""
    return greedy_match_ious(pairwise_iou(a, b, hull=hull))


# ---- recall curves -----------------------------------------------------------


def iou_thresholds(lo: float = 0.0, hi: float = 1.0, step: float = 0.025) -> np.ndarray:
    num = int(round((hi - lo) / step)) + 1
    return np.round(np.linspace(lo, hi, num), 10)


REPEATABILITY_THRESHOLDS = iou_thresholds(0.0, 1.0)
RECALL_THRESHOLDS = iou_thresholds(0.5, 1.0)


def curve_auc(thresholds: np.ndarray, values: np.ndarray) -> float:
    """Trapezoidal area normalised by the threshold range."""
    t = np.asarray(thresholds, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if len(t) == 1:
        return float(v[0])
    dt = np.diff(t)
    w = np.zeros_like(t)
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return float(min(1.0, (w * v).sum() / w.sum()))


def recall_curve(best_ious, thresholds: np.ndarray | None = None) -> RecallCurve:
    """Fraction of targets whose best IoU reaches each threshold.

    A target with best IoU 0 is unmatched and never counts, even at t = 0.
    """
    best = np.asarray(best_ious, dtype=np.float64).ravel()
    if best.size == 0:
        raise ValueError("recall curve over an empty target set")
    t = REPEATABILITY_THRESHOLDS if thresholds is None else np.asarray(thresholds, dtype=np.float64)
    if np.any(np.diff(t) <= 0):
        raise ValueError("thresholds must be strictly ascending")
    hits = np.sort(best[best > 0])
    counts = len(hits) - np.searchsorted(hits, t, side="left")
    recall = counts / best.size
    return RecallCurve(thresholds=t.copy(), recall=recall, auc=curve_auc(t, recall), count=int(best.size))


# ---- size bins ---------------------------------------------------------------


def size_bin_edges(width: float, height: float, n_bins: int = NUM_SIZE_BINS, lo: float = MIN_BIN_SIDE) -> np.ndarray:
    """Log-spaced sqrt-area edges from ``lo`` to the image diagonal."""
    hi = max(math.hypot(width, height), lo * 2.0)
    return np.geomspace(lo, hi, n_bins + 1)


def size_bin_indices(boxes: np.ndarray, edges: np.ndarray) -> np.ndarray:
    sq = np.sqrt(box_areas(boxes))
    idx = np.searchsorted(edges, sq, side="right") - 1
    return np.clip(idx, 0, len(edges) - 2)


def size_bin_index(box: BoundingBox, edges) -> int:
    return int(size_bin_indices(box.as_array()[None, :], np.asarray(edges, dtype=np.float64))[0])

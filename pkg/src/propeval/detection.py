"""Proposal-filtered detection scoring: overlap filtering, NMS and VOC AP.

Detection files are JSONL, one image per line::

    {"image_id": "000001", "detections": [[x0, y0, x1, y1, score, "class"], ...]}
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data_io import FormatError, GroundTruthSet, ProposalSet, _iter_jsonl
from .geometry import iou_matrix


@dataclass(frozen=True)
class ImageDetections:
    image_id: str
    boxes: np.ndarray
    scores: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        boxes = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 4)
        scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        labels = tuple(str(x) for x in self.labels)
        if not (len(boxes) == len(scores) == len(labels)):
            raise ValueError(f"{self.image_id}: detection fields differ in length")
        if not np.all(np.isfinite(scores)) or not np.all(np.isfinite(boxes)):
            raise ValueError(f"{self.image_id}: non-finite detection values")
        if np.any(boxes[:, 2] < boxes[:, 0]) or np.any(boxes[:, 3] < boxes[:, 1]):
            raise ValueError(f"{self.image_id}: detection with negative extent")
        boxes.setflags(write=False)
        scores.setflags(write=False)
        object.__setattr__(self, "boxes", boxes)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.boxes)

    def take(self, idx) -> ImageDetections:
        idx = np.asarray(idx, dtype=np.int64)
        return ImageDetections(self.image_id, self.boxes[idx], self.scores[idx], tuple(self.labels[i] for i in idx))


DetectionSet = dict  # image_id -> ImageDetections, in file order


def load_detections(path) -> dict[str, ImageDetections]:
    path = Path(path)
    out: dict[str, ImageDetections] = {}
    for lineno, rec in _iter_jsonl(path):
        where = f"{path}:{lineno}"
        image_id = str(rec["image_id"])
        if image_id in out:
            raise FormatError(f"{where}: duplicate image id {image_id!r}")
        boxes, scores, labels = [], [], []
        for k, row in enumerate(rec.get("detections", [])):
            if not isinstance(row, (list, tuple)) or len(row) != 6:
                raise FormatError(f"{where}: image {image_id!r} detection {k} must be [x0, y0, x1, y1, score, class]")
            try:
                vals = [float(v) for v in row[:5]]
            except (TypeError, ValueError):
                raise FormatError(f"{where}: image {image_id!r} detection {k} is not numeric") from None
            boxes.append(vals[:4])
            scores.append(vals[4])
            labels.append(str(row[5]))
        try:
            out[image_id] = ImageDetections(image_id, boxes, scores, tuple(labels))
        except ValueError as exc:
            raise FormatError(f"{where}: {exc}") from None
    return out


def save_detections(dets: dict[str, ImageDetections], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for d in dets.values():
            rows = [b + [s, lab] for b, s, lab in zip(d.boxes.tolist(), d.scores.tolist(), d.labels)]
            fh.write(json.dumps({"image_id": d.image_id, "detections": rows}, separators=(", ", ": ")) + "\n")


def filter_by_proposals(dets: dict[str, ImageDetections], props: ProposalSet, min_iou: float = 0.8) -> dict[str, ImageDetections]:
    """Keep detections overlapping some proposal of their image by more than ``min_iou``.

    ``min_iou <= 0`` disables the overlap test for images that have
    proposals; images without proposals lose all detections.
    """
    out = {}
    for image_id, d in dets.items():
        p = props.images.get(image_id)
        if p is None or not len(p) or not len(d):
            out[image_id] = d.take([])
            continue
        if min_iou <= 0:
            out[image_id] = d
            continue
        keep = np.flatnonzero((iou_matrix(d.boxes, p.boxes) > min_iou).any(axis=1))
        out[image_id] = d.take(keep)
    return out


def nms_indices(boxes: np.ndarray, scores: np.ndarray, overlap: float = 0.5) -> np.ndarray:
    """Greedy suppression; kept indices in descending score order."""
    order = np.argsort(-np.asarray(scores), kind="stable")
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    ious = iou_matrix(boxes, boxes)
    suppressed = np.zeros(len(boxes), dtype=bool)
    keep = []
    for i in order:
        if suppressed[i]:
            continue
        keep.append(i)
        suppressed |= ious[i] > overlap
    return np.asarray(keep, dtype=np.int64)


def nms(dets: dict[str, ImageDetections], overlap: float = 0.5) -> dict[str, ImageDetections]:
    """Per image and class non-maximum suppression, preserving input order."""
    out = {}
    for image_id, d in dets.items():
        labels = np.asarray(d.labels, dtype=object)
        kept = []
        for lab in dict.fromkeys(d.labels):
            idx = np.flatnonzero(labels == lab)
            kept.append(idx[nms_indices(d.boxes[idx], d.scores[idx], overlap)])
        keep = np.sort(np.concatenate(kept)) if kept else np.zeros(0, dtype=np.int64)
        out[image_id] = d.take(keep)
    return out


@dataclass(frozen=True)
class PRCurve:
    recall: np.ndarray
    precision: np.ndarray
    ap: float
    num_positives: int = 0


def voc07_ap(recall: np.ndarray, precision: np.ndarray) -> float:
    """11-point interpolated AP: mean over r in {0, 0.1, ..., 1} of the max
    precision at recall >= r."""
    vals = []
    for t in np.linspace(0.0, 1.0, 11):
        mask = recall >= t - 1e-12
        vals.append(float(precision[mask].max()) if mask.any() else 0.0)
    return sum(vals) / 11.0


def continuous_ap(recall: np.ndarray, precision: np.ndarray) -> float:
    """Area under the monotone precision envelope."""
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    idx = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


def average_precision(
    dets: dict[str, ImageDetections],
    gt: GroundTruthSet,
    cls: str,
    iou_thresh: float = 0.5,
    use_11_point: bool = True,
    use_difficult: bool = False,
) -> PRCurve:
    """VOC-style precision/recall and AP for one class.

    Detections are ranked by score (ties by input order). A detection is a
    true positive when its best-overlapping annotation of the class reaches
    ``iou_thresh`` and is unclaimed; best matches on difficult annotations
    are ignored, every other detection is a false positive.
    """
    if cls not in gt.classes:
        raise KeyError(f"unknown class {cls!r}")
    gt_boxes, gt_diff, claimed = {}, {}, {}
    npos = 0
    for image_id, ann in gt.images.items():
        mask = np.array([lab == cls for lab in ann.labels], dtype=bool)
        diff = ann.difficult[mask] if not use_difficult else np.zeros(int(mask.sum()), dtype=bool)
        gt_boxes[image_id] = ann.boxes[mask]
        gt_diff[image_id] = diff
        claimed[image_id] = np.zeros(int(mask.sum()), dtype=bool)
        npos += int((~diff).sum())

    image_ids, boxes, scores = [], [], []
    for image_id, d in dets.items():
        for b, s, lab in zip(d.boxes, d.scores, d.labels):
            if lab == cls:
                image_ids.append(image_id)
                boxes.append(b)
                scores.append(s)
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    tp = np.zeros(len(order))
    fp = np.zeros(len(order))
    for rank, k in enumerate(order):
        image_id = image_ids[k]
        g = gt_boxes.get(image_id)
        if g is None or not len(g):
            fp[rank] = 1
            continue
        ov = iou_matrix(boxes[k][None, :], g)[0]
        j = int(np.argmax(ov))
        if ov[j] >= iou_thresh:
            if gt_diff[image_id][j]:
                continue
            if not claimed[image_id][j]:
                claimed[image_id][j] = True
                tp[rank] = 1
            else:
                fp[rank] = 1
        else:
            fp[rank] = 1
    ctp, cfp = np.cumsum(tp), np.cumsum(fp)
    recall = ctp / npos if npos else np.zeros_like(ctp)
    denom = np.maximum(ctp + cfp, np.finfo(np.float64).eps)
    precision = ctp / denom
    # ignored (difficult) detections leave no PR point
    counted = (tp + fp) > 0
    recall, precision = recall[counted], precision[counted]
    if npos == 0:
        ap = 0.0
    else:
        ap = voc07_ap(recall, precision) if use_11_point else continuous_ap(recall, precision)
    return PRCurve(recall, precision, ap, npos)


def mean_ap(aps) -> float:
    aps = [float(a) for a in aps]
    if not aps:
        raise ValueError("mean AP over zero classes")
    return math.fsum(aps) / len(aps)

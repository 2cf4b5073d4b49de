"""Loading and saving annotations, proposals and blacklists.

The interchange format is JSON-Lines, one image per line::

    {"image_id": "000001", "width": 353, "height": 500,
     "boxes": [[x0, y0, x1, y1], ...] or [[x0, y0, x1, y1, score], ...],
     "labels": [...], "difficult": [...]}

``labels`` and ``difficult`` only appear in ground-truth files.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

logger = logging.getLogger(__name__)

POLICIES = ("top-score", "first-n", "auto")


class FormatError(ValueError):
    """An input file violates its schema."""


class PolicyError(ValueError):
    """A selection policy cannot be applied to the given proposals."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _box_array(rows) -> np.ndarray:
    arr = np.asarray(rows, dtype=np.float64).reshape(-1, 4)
    return _frozen(arr)


@dataclass(frozen=True)
class ImageAnnotations:
    image_id: str
    width: float
    height: float
    boxes: np.ndarray
    labels: tuple[str, ...] = ()
    difficult: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def __post_init__(self) -> None:
        object.__setattr__(self, "boxes", _box_array(self.boxes))
        object.__setattr__(self, "labels", tuple(str(x) for x in self.labels))
        diff = np.asarray(self.difficult, dtype=bool).reshape(-1)
        if diff.size == 0 and len(self.boxes):
            diff = np.zeros(len(self.boxes), dtype=bool)
        object.__setattr__(self, "difficult", _frozen(diff))
        if not (len(self.labels) == len(self.boxes) == len(self.difficult)):
            raise ValueError(f"{self.image_id}: boxes, labels and difficult flags differ in length")

    def __len__(self) -> int:
        return len(self.boxes)


@dataclass(frozen=True)
class GroundTruthSet:
    images: dict[str, ImageAnnotations]
    classes: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.classes:
            labels = {lab for ann in self.images.values() for lab in ann.labels}
            object.__setattr__(self, "classes", tuple(sorted(labels)))

    @classmethod
    def from_images(cls, images: Iterable[ImageAnnotations], classes: tuple[str, ...] = ()) -> GroundTruthSet:
        out: dict[str, ImageAnnotations] = {}
        for ann in images:
            if ann.image_id in out:
                raise FormatError(f"duplicate image id {ann.image_id!r}")
            out[ann.image_id] = ann
        return cls(out, classes)

    @property
    def num_annotations(self) -> int:
        return sum(len(a) for a in self.images.values())

    def __len__(self) -> int:
        return len(self.images)


@dataclass(frozen=True)
class ImageProposals:
    image_id: str
    boxes: np.ndarray
    scores: np.ndarray | None = None
    width: float | None = None
    height: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "boxes", _box_array(self.boxes))
        if self.scores is not None:
            scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
            if len(scores) != len(self.boxes):
                raise ValueError(f"{self.image_id}: {len(scores)} scores for {len(self.boxes)} boxes")
            object.__setattr__(self, "scores", _frozen(scores))

    def __len__(self) -> int:
        return len(self.boxes)


@dataclass(frozen=True)
class ProposalSet:
    method: str
    images: dict[str, ImageProposals]

    def __post_init__(self) -> None:
        flags = {p.scores is not None for p in self.images.values() if len(p)}
        if len(flags) > 1:
            raise FormatError(f"{self.method}: mixes scored and unscored images")

    @property
    def scored(self) -> bool:
        return any(p.scores is not None for p in self.images.values() if len(p))

    def __len__(self) -> int:
        return len(self.images)

    def average_count(self) -> float:
        if not self.images:
            return 0.0
        return float(np.mean([len(p) for p in self.images.values()]))


Blacklist = frozenset  # of (image_id, class_label) pairs


# ---- JSONL -------------------------------------------------------------------


def _iter_jsonl(path: Path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict) or "image_id" not in rec:
                raise FormatError(f"{path}:{lineno}: record without image_id")
            yield lineno, rec


def _parse_boxes(rec: dict, where: str, width: float | None, height: float | None, clamp: bool):
    image_id = rec["image_id"]
    rows = rec.get("boxes", [])
    coords, scores = [], []
    for k, row in enumerate(rows):
        if not isinstance(row, (list, tuple)) or len(row) not in (4, 5):
            raise FormatError(f"{where}: image {image_id!r} box {k} must have 4 or 5 numbers")
        try:
            vals = [float(v) for v in row]
        except (TypeError, ValueError):
            raise FormatError(f"{where}: image {image_id!r} box {k} is not numeric") from None
        if not all(math.isfinite(v) for v in vals):
            raise FormatError(f"{where}: image {image_id!r} box {k} has non-finite values")
        x0, y0, x1, y1 = vals[:4]
        if x1 < x0 or y1 < y0:
            raise FormatError(f"{where}: image {image_id!r} box {k} has x1 < x0 or y1 < y0")
        coords.append([x0, y0, x1, y1])
        scores.append(vals[4] if len(vals) == 5 else None)
    boxes = np.asarray(coords, dtype=np.float64).reshape(-1, 4)
    if clamp and width is not None and height is not None and len(boxes):
        clamped = np.clip(boxes, 0.0, [width, height, width, height])
        if not np.array_equal(clamped, boxes):
            logger.warning("%s: image %r has boxes outside the image, clamped", where, image_id)
        boxes = clamped
    return boxes, scores


def _image_size(rec: dict, where: str, required: bool) -> tuple[float | None, float | None]:
    w, h = rec.get("width"), rec.get("height")
    if w is None or h is None:
        if required:
            raise FormatError(f"{where}: image {rec['image_id']!r} is missing width/height")
        return None, None
    return _size_value(w), _size_value(h)


def _size_value(v) -> float:
    # integral sizes stay ints so files round-trip byte for byte
    v = float(v)
    return int(v) if v.is_integer() else v


def load_ground_truth(path, format: str | None = None) -> GroundTruthSet:
    """Read annotations from a JSONL file or a Pascal VOC XML directory."""
    path = Path(path)
    if format is None:
        format = "voc-xml-dir" if path.is_dir() else "jsonl"
    if format == "voc-xml-dir":
        return _load_voc_dir(path)
    if format != "jsonl":
        raise ValueError(f"unknown ground-truth format {format!r}")
    images = []
    seen = set()
    for lineno, rec in _iter_jsonl(path):
        where = f"{path}:{lineno}"
        image_id = str(rec["image_id"])
        if image_id in seen:
            raise FormatError(f"{where}: duplicate image id {image_id!r}")
        seen.add(image_id)
        width, height = _image_size(rec, where, required=True)
        boxes, _ = _parse_boxes(rec, where, width, height, clamp=True)
        labels = rec.get("labels")
        if labels is None:
            labels = ["object"] * len(boxes)
        difficult = rec.get("difficult") or [False] * len(boxes)
        if len(labels) != len(boxes) or len(difficult) != len(boxes):
            raise FormatError(f"{where}: image {image_id!r} labels/difficult length mismatch")
        images.append(ImageAnnotations(image_id, width, height, boxes, tuple(labels), np.asarray(difficult, dtype=bool)))
    return GroundTruthSet.from_images(images)


def _xml_text(node, tag: str, where: str) -> str:
    child = node.find(tag)
    if child is None or child.text is None:
        raise FormatError(f"{where}: missing <{tag}>")
    return child.text.strip()


def _load_voc_dir(path: Path) -> GroundTruthSet:
    if (path / "Annotations").is_dir():
        path = path / "Annotations"
    files = sorted(path.glob("*.xml"))
    if not files:
        logger.warning("%s: no VOC annotation files found", path)
    images = []
    for xml_path in files:
        where = str(xml_path)
        try:
            root = ET.parse(xml_path).getroot()
        except ET.ParseError as exc:
            raise FormatError(f"{where}: {exc}") from None
        size = root.find("size")
        if size is None:
            raise FormatError(f"{where}: missing image size")
        width = float(_xml_text(size, "width", where))
        height = float(_xml_text(size, "height", where))
        coords, labels, difficult = [], [], []
        for obj in root.findall("object"):
            bb = obj.find("bndbox")
            if bb is None:
                raise FormatError(f"{where}: object without <bndbox>")
            x0, y0, x1, y1 = (float(_xml_text(bb, t, where)) for t in ("xmin", "ymin", "xmax", "ymax"))
            # 1-based inclusive pixel indices to continuous coordinates
            x0, y0 = x0 - 1.0, y0 - 1.0
            if x1 < x0 or y1 < y0:
                raise FormatError(f"{where}: image {xml_path.stem!r} has an inverted box")
            coords.append([x0, y0, x1, y1])
            labels.append(_xml_text(obj, "name", where))
            diff = obj.find("difficult")
            difficult.append(diff is not None and (diff.text or "0").strip() == "1")
        boxes = np.asarray(coords, dtype=np.float64).reshape(-1, 4)
        clamped = np.clip(boxes, 0.0, [width, height, width, height])
        if not np.array_equal(clamped, boxes):
            logger.warning("%s: boxes outside the image, clamped", where)
        images.append(ImageAnnotations(xml_path.stem, width, height, clamped, tuple(labels), np.asarray(difficult, dtype=bool)))
    return GroundTruthSet.from_images(images)


def load_proposals(path, method: str | None = None) -> ProposalSet:
    """Read a proposal JSONL file, keeping each image's box order."""
    path = Path(path)
    images: dict[str, ImageProposals] = {}
    for lineno, rec in _iter_jsonl(path):
        where = f"{path}:{lineno}"
        image_id = str(rec["image_id"])
        if image_id in images:
            raise FormatError(f"{where}: duplicate image id {image_id!r}")
        width, height = _image_size(rec, where, required=False)
        boxes, scores = _parse_boxes(rec, where, width, height, clamp=False)
        has = {s is not None for s in scores}
        if len(has) > 1:
            raise FormatError(f"{where}: image {image_id!r} mixes scored and unscored boxes")
        arr = np.asarray(scores, dtype=np.float64) if has == {True} else None
        images[image_id] = ImageProposals(image_id, boxes, arr, width, height)
    try:
        return ProposalSet(method or path.stem, images)
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None


def _dump(rec: dict) -> str:
    return json.dumps(rec, separators=(", ", ": "), allow_nan=False)


def save_ground_truth(gt: GroundTruthSet, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ann in gt.images.values():
            rec = {
                "image_id": ann.image_id,
                "width": _size_value(ann.width),
                "height": _size_value(ann.height),
                "boxes": ann.boxes.tolist(),
                "labels": list(ann.labels),
                "difficult": [bool(d) for d in ann.difficult],
            }
            fh.write(_dump(rec) + "\n")


def proposals_record(p: ImageProposals) -> dict:
    rows = p.boxes.tolist()
    if p.scores is not None:
        rows = [r + [s] for r, s in zip(rows, p.scores.tolist())]
    rec: dict = {"image_id": p.image_id}
    if p.width is not None and p.height is not None:
        rec["width"] = _size_value(p.width)
        rec["height"] = _size_value(p.height)
    rec["boxes"] = rows
    return rec


def save_proposals(ps: ProposalSet, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in ps.images.values():
            fh.write(_dump(proposals_record(p)) + "\n")


# ---- selection and blacklists -----------------------------------------------


def select_image(p: ImageProposals, n: int, policy: str = "auto") -> ImageProposals:
    if n < 0:
        raise ValueError("proposal count must be non-negative")
    if policy not in POLICIES:
        raise PolicyError(f"unknown selection policy {policy!r}")
    if policy == "auto":
        policy = "top-score" if p.scores is not None else "first-n"
    if policy == "top-score":
        if p.scores is None:
            if len(p) == 0:
                return p
            raise PolicyError(f"image {p.image_id!r} has no scores for top-score selection")
        order = np.argsort(-p.scores, kind="stable")[:n]
    else:
        order = np.arange(min(n, len(p)))
    scores = p.scores[order] if p.scores is not None else None
    return ImageProposals(p.image_id, p.boxes[order], scores, p.width, p.height)


def select_proposals(s: ProposalSet, n: int, policy: str = "auto") -> ProposalSet:
    """Keep at most ``n`` proposals per image.

    ``top-score`` sorts by descending score with ties in file order,
    ``first-n`` keeps the file prefix, ``auto`` picks by whether the set is
    scored.
    """
    if policy == "top-score" and not s.scored and any(len(p) for p in s.images.values()):
        raise PolicyError(f"{s.method}: top-score selection on an unscored proposal set")
    return ProposalSet(s.method, {k: select_image(p, n, policy) for k, p in s.images.items()})


def load_blacklist(path) -> frozenset:
    pairs = set()
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].startswith("#"):
                continue
            if len(row) != 2:
                raise FormatError(f"{path}:{lineno}: expected 'image_id,class'")
            if lineno == 1 and [c.strip() for c in row] == ["image_id", "class"]:
                continue
            pairs.add((row[0].strip(), row[1].strip()))
    return frozenset(pairs)


def apply_blacklist(gt: GroundTruthSet, bl) -> GroundTruthSet:
    """Drop annotations whose ``(image_id, class)`` pair is blacklisted."""
    bl = frozenset(bl)
    if not bl:
        return gt
    for image_id, label in sorted(bl):
        if image_id not in gt.images or label not in gt.classes:
            logger.warning("blacklist entry (%s, %s) matches no known image/class", image_id, label)
    images = {}
    for image_id, ann in gt.images.items():
        keep = np.array([(image_id, lab) not in bl for lab in ann.labels], dtype=bool)
        if keep.all():
            images[image_id] = ann
            continue
        images[image_id] = ImageAnnotations(
            image_id,
            ann.width,
            ann.height,
            ann.boxes[keep],
            tuple(lab for lab, k in zip(ann.labels, keep) if k),
            ann.difficult[keep],
        )
    return GroundTruthSet(images, gt.classes)

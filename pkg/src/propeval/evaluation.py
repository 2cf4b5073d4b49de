"""Repeatability under perturbations and ground-truth recall.

Repeatability matches projected perturbed proposals one-to-one to the
reference proposals; recall scores each annotation by its best-covering
proposal with no exclusivity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .data_io import GroundTruthSet, ImageProposals, ProposalSet, select_image
from .geometry import (
    NUM_SIZE_BINS,
    RECALL_THRESHOLDS,
    REPEATABILITY_THRESHOLDS,
    BoundingBox,
    RecallCurve,
    greedy_match_ious,
    iou_matrix,
    pairwise_iou,
    recall_curve,
    size_bin_edges,
    size_bin_indices,
)
from .perturbations import PerturbationSpec, centres_inside, project_boxes

DEFAULT_COUNTS = (100, 1000, 10000)


class ImageIdMismatch(ValueError):
    pass


@dataclass(frozen=True)
class RepeatabilityResult:
    """Best IoU of every reference proposal, grouped by size bin.

    Results for single images merge into dataset-level results by pooling
    the per-bin IoUs; the AUC is the unweighted mean over non-empty bins.
    """

    spec: PerturbationSpec
    bin_ious: tuple[np.ndarray, ...]
    n_reference: int
    n_perturbed: int
    n_kept: int
    n_images: int = 1
    thresholds: np.ndarray = REPEATABILITY_THRESHOLDS

    @property
    def bin_curves(self) -> list[RecallCurve | None]:
        return [recall_curve(b, self.thresholds) if len(b) else None for b in self.bin_ious]

    @property
    def auc(self) -> float:
        aucs = [c.auc for c in self.bin_curves if c is not None]
        if not aucs:
            return math.nan
        return sum(aucs) / len(aucs)

    def mean_recall(self) -> np.ndarray:
        """Bin-averaged recall at each threshold."""
        curves = [c.recall for c in self.bin_curves if c is not None]
        if not curves:
            return np.full(len(self.thresholds), np.nan)
        return np.mean(curves, axis=0)

    @staticmethod
    def merge(results: Sequence[RepeatabilityResult]) -> RepeatabilityResult:
        if not results:
            raise ValueError("nothing to merge")
        spec = results[0].spec
        if any(r.spec != spec for r in results):
            raise ValueError("cannot merge results of different perturbations")
        n_bins = len(results[0].bin_ious)
        bins = tuple(np.concatenate([r.bin_ious[k] for r in results]) for k in range(n_bins))
        return RepeatabilityResult(
            spec,
            bins,
            sum(r.n_reference for r in results),
            sum(r.n_perturbed for r in results),
            sum(r.n_kept for r in results),
            sum(r.n_images for r in results),
            results[0].thresholds,
        )


def evaluate_repeatability(
    ref: ImageProposals,
    pert: ImageProposals,
    spec: PerturbationSpec,
    crop: BoundingBox | None = None,
    image_size: tuple[float, float] | None = None,
    bin_edges: np.ndarray | None = None,
    thresholds: np.ndarray = REPEATABILITY_THRESHOLDS,
    hull: bool = False,
) -> RepeatabilityResult:
    """Repeatability of one image under one perturbation.

    Perturbed proposals are projected to the reference frame, those whose
    centre leaves the reference image are dropped, and the rest are matched
    greedily to the reference proposals.
    """
    if ref.image_id != pert.image_id:
        raise ImageIdMismatch(f"reference {ref.image_id!r} vs perturbed {pert.image_id!r}")
    if image_size is None:
        if ref.width is None or ref.height is None:
            raise ValueError(f"image {ref.image_id!r}: reference size unknown")
        image_size = (ref.width, ref.height)
    width, height = image_size
    if bin_edges is None:
        bin_edges = size_bin_edges(width, height)
    projected = project_boxes(pert.boxes, spec, crop)
    keep = centres_inside(projected, width, height)
    projected = projected[keep]
    if len(projected) and len(ref):
        match = greedy_match_ious(pairwise_iou(projected, ref.boxes, hull=hull))
        best = match.best_ious_b(len(ref))
    else:
        best = np.zeros(len(ref))
    bins = size_bin_indices(ref.boxes, bin_edges)
    per_bin = tuple(best[bins == k] for k in range(len(bin_edges) - 1))
    return RepeatabilityResult(spec, per_bin, len(ref), len(pert), int(keep.sum()), 1, np.asarray(thresholds))


@dataclass(frozen=True)
class RecallEntry:
    n: int
    curve: RecallCurve
    recall_50: float
    recall_80: float
    avg_proposals: float

    @property
    def auc(self) -> float:
        return self.curve.auc


@dataclass(frozen=True)
class RecallReport:
    method: str
    entries: tuple[RecallEntry, ...]
    num_annotations: int
    num_images: int

    def series(self, field: str) -> list[tuple[int, float]]:
        return [(e.n, getattr(e, field)) for e in self.entries]

    def entry(self, n: int) -> RecallEntry:
        for e in self.entries:
            if e.n == n:
                return e
        raise KeyError(n)


def _threshold_fraction(best: np.ndarray, t: float) -> float:
    return float(np.count_nonzero((best >= t) & (best > 0)) / best.size)


def coverage_ious(gt: GroundTruthSet, proposals: dict[str, ImageProposals], include_difficult: bool = True) -> np.ndarray:
    """Best IoU of every annotation over its image's proposals, in GT order."""
    out = []
    for image_id, ann in gt.images.items():
        boxes = ann.boxes if include_difficult else ann.boxes[~ann.difficult]
        if not len(boxes):
            continue
        props = proposals.get(image_id)
        if props is None or not len(props):
            out.append(np.zeros(len(boxes)))
            continue
        out.append(iou_matrix(boxes, props.boxes).max(axis=1))
    return np.concatenate(out) if out else np.zeros(0)


def evaluate_recall(
    gt: GroundTruthSet,
    proposals: ProposalSet,
    counts: Iterable[int] = DEFAULT_COUNTS,
    policy: str = "auto",
    thresholds: np.ndarray = RECALL_THRESHOLDS,
    include_difficult: bool = True,
) -> RecallReport:
    """Recall-versus-IoU curves for each requested proposal count.

    Images with annotations but no proposals count as fully missed;
    proposal-only images are ignored.
    """
    n_ann = sum(len(a) if include_difficult else int((~a.difficult).sum()) for a in gt.images.values())
    if n_ann == 0:
        raise ValueError("ground truth has no annotations")
    entries = []
    for n in counts:
        selected = {k: select_image(proposals.images[k], n, policy) for k in gt.images if k in proposals.images}
        best = coverage_ious(gt, selected, include_difficult)
        achieved = [len(selected[k]) if k in selected else 0 for k in gt.images]
        entries.append(
            RecallEntry(
                n=int(n),
                curve=recall_curve(best, thresholds),
                recall_50=_threshold_fraction(best, 0.5),
                recall_80=_threshold_fraction(best, 0.8),
                avg_proposals=float(np.mean(achieved)),
            )
        )
    return RecallReport(proposals.method, tuple(entries), n_ann, len(gt.images))


__all__ = [
    "DEFAULT_COUNTS",
    "ImageIdMismatch",
    "NUM_SIZE_BINS",
    "RecallEntry",
    "RecallReport",
    "RepeatabilityResult",
    "coverage_ious",
    "evaluate_recall",
    "evaluate_repeatability",
]

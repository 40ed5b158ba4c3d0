"""Evaluation: SOFI bidirectional matte error, matting MSE/SAD, and
greedy-matched average precision for masks or boxes."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from solokit.masks import BinaryMask, DimensionMismatch, InstanceSet, SoftMask, box_iou, iou, mask_to_bbox


def mse(a: np.ndarray, b: np.ndarray) -> float:
    d = a - b
    return float(np.mean(d * d))


def sad(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sum(np.abs(a - b)))


ERRORS = {"mse": mse, "sad": sad}


def _error_fn(err):
    if callable(err):
        return err
    try:
        return ERRORS[err.lower()]
    except KeyError:
        raise ValueError(f"unknown error function {err!r}") from None


@dataclass(frozen=True)
class MatteSet:
    height: int
    width: int
    mattes: tuple[SoftMask, ...] = field(default_factory=tuple)
    class_ids: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "mattes", tuple(self.mattes))
        if self.class_ids is not None:
            object.__setattr__(self, "class_ids", tuple(int(c) for c in self.class_ids))
            if len(self.class_ids) != len(self.mattes):
                raise ValueError("class_ids must align with mattes")
        for k, m in enumerate(self.mattes):
            if m.shape != (self.height, self.width):
                raise DimensionMismatch(f"matte {k} has extents {m.shape}")

    def __len__(self):
        return len(self.mattes)

    def of_class(self, c: int) -> "MatteSet":
        if self.class_ids is None:
            raise ValueError("matte set carries no class ids")
        keep = [k for k, ci in enumerate(self.class_ids) if ci == c]
        return MatteSet(self.height, self.width, tuple(self.mattes[k] for k in keep),
                        tuple(c for _ in keep))


def _one_way(src: Sequence[np.ndarray], dst: Sequence[np.ndarray], fn, zero) -> float:
    if not src:
        return 0.0
    total = 0.0
    for s in src:
        if dst:
            total += min(fn(s, d) for d in dst)
        else:
            total += fn(s, zero)
    return total / len(src)


def sofi_error(pred: MatteSet, gt: MatteSet, err="mse", strict_class: bool = False) -> float:
    """Mean best-match error from each ground truth to the predictions plus the
    mean best-match error from each prediction to the ground truths.

    A side with no counterpart is compared against the all-zero matte. With
    ``strict_class`` matches are restricted to mattes of the same class.
    """
    if (pred.height, pred.width) != (gt.height, gt.width):
        raise DimensionMismatch("prediction and ground-truth extents differ")
    fn = _error_fn(err)
    zero = np.zeros((gt.height, gt.width))
    if strict_class:
        if pred.class_ids is None or gt.class_ids is None:
            raise ValueError("strict_class needs class ids on both sets")
        total = 0.0
        gts = [(m.values, c) for m, c in zip(gt.mattes, gt.class_ids)]
        preds = [(m.values, c) for m, c in zip(pred.mattes, pred.class_ids)]
        for src, dst, flip in ((gts, preds, False), (preds, gts, True)):
            if not src:
                continue
            acc = 0.0
            for s, c in src:
                cands = [d for d, dc in dst if dc == c]
                if cands:
                    acc += min(fn(d, s) if flip else fn(s, d) for d in cands)
                else:
                    acc += fn(zero, s) if flip else fn(s, zero)
            total += acc / len(src)
        return total
    g = [m.values for m in gt.mattes]
    p = [m.values for m in pred.mattes]
    forward = _one_way(g, p, fn, zero)
    backward = _one_way(p, g, lambda a, b: fn(b, a), zero)
    return forward + backward


def sofi_benchmark(samples: Iterable[tuple[MatteSet, MatteSet]], err="mse", average: str = "class") -> float:
    """Average SOFI error over a dataset.

    ``average="class"`` computes the error per image and class, means over
    the images in which each class appears, then means over classes.
    ``average="image"`` ignores classes and means the per-image errors.
    """
    samples = list(samples)
    if not samples:
        return 0.0
    if average == "image":
        return float(np.mean([sofi_error(p, g, err) for p, g in samples]))
    if average != "class":
        raise ValueError(f"unknown averaging {average!r}")
    per_class = defaultdict(list)
    for p, g in samples:
        classes = sorted(set(p.class_ids or ()) | set(g.class_ids or ()))
        for c in classes:
            per_class[c].append(sofi_error(p.of_class(c), g.of_class(c), err))
    if not per_class:
        return 0.0
    return float(np.mean([np.mean(per_class[c]) for c in sorted(per_class)]))


def matting_error(p: SoftMask, g: SoftMask, region: Optional[BinaryMask] = None, err="mse") -> float:
    """MSE (mean over the region) or SAD (sum over the region) between two mattes."""
    if p.shape != g.shape:
        raise DimensionMismatch(f"prediction {p.shape} and ground truth {g.shape} differ")
    fn = _error_fn(err)
    if region is None:
        return fn(p.values, g.values)
    if region.shape != p.shape:
        raise DimensionMismatch(f"region {region.shape} vs mattes {p.shape}")
    if region.is_empty():
        raise ValueError("evaluation region is empty")
    sel = region.bits
    return fn(p.values[sel], g.values[sel])


@dataclass(frozen=True)
class ApConfig:
    iou_thresholds: tuple[float, ...] = tuple(np.round(np.linspace(0.5, 0.95, 10), 2))
    recall_points: int = 101
    match_kind: str = "mask"

    def __post_init__(self):
        ts = tuple(float(t) for t in self.iou_thresholds)
        object.__setattr__(self, "iou_thresholds", ts)
        if not ts or any(not 0 < t < 1 for t in ts):
            raise ValueError("IoU thresholds must lie in (0, 1)")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("IoU thresholds must be strictly increasing")
        if self.recall_points < 2:
            raise ValueError("need at least two recall points")
        if self.match_kind not in ("mask", "box"):
            raise ValueError(f"unknown match kind {self.match_kind!r}")


@dataclass(frozen=True)
class ApResult:
    per_threshold: dict[float, float]
    per_class: dict[int, dict[float, float]]

    @property
    def mean(self) -> float:
        if not self.per_threshold:
            return 0.0
        return float(np.mean(list(self.per_threshold.values())))


def _pair_iou(a, b, kind) -> float:
    if kind == "box":
        return box_iou(mask_to_bbox(a), mask_to_bbox(b))
    return iou(a, b)


def interpolated_ap(tp: np.ndarray, n_gt: int, recall_points: int = 101) -> float:
    """Area under the precision envelope sampled at equally spaced recalls.

    ``tp`` flags each score-ordered detection as true (1) or false (0) positive.
    """
    if n_gt == 0:
        raise ValueError("AP undefined without ground truth")
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    recall = ctp / n_gt
    precision = ctp / np.arange(1, tp.size + 1)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    levels = np.linspace(0.0, 1.0, recall_points)
    idx = np.searchsorted(recall, levels, side="left")
    sampled = np.where(idx < tp.size, envelope[np.minimum(idx, tp.size - 1)], 0.0)
    return float(np.mean(sampled))


def average_precision(preds: Sequence[InstanceSet], gts: Sequence[InstanceSet], cfg: ApConfig = ApConfig()) -> ApResult:
    """COCO-style AP: per class and IoU threshold, detections across all
    images are taken by descending score and greedily matched to the
    highest-IoU unmatched same-class ground truth in their image.

    Classes without ground truth are skipped; the result averages over
    classes, then thresholds.
    """
    if len(preds) != len(gts):
        raise ValueError("need one prediction set per ground-truth image")
    classes = sorted({inst.class_id for g in gts for inst in g})
    per_class: dict[int, dict[float, float]] = {}
    for c in classes:
        dets = [(inst.score, img, k) for img, p in enumerate(preds)
                for k, inst in enumerate(p) if inst.class_id == c]
        # stable: ties keep (image, position) order
        dets.sort(key=lambda d: -d[0])
        gt_idx = {img: [k for k, inst in enumerate(g) if inst.class_id == c] for img, g in enumerate(gts)}
        n_gt = sum(len(v) for v in gt_idx.values())
        overlaps = {}
        for _, img, k in dets:
            pm = preds[img][k].mask
            overlaps[img, k] = [_pair_iou(pm, gts[img][gk].mask, cfg.match_kind) for gk in gt_idx[img]]
        per_class[c] = {}
        for t in cfg.iou_thresholds:
            matched = defaultdict(set)
            tp = np.zeros(len(dets))
            for d, (_, img, k) in enumerate(dets):
                best, best_iou = -1, t
                for pos, ov in enumerate(overlaps[img, k]):
                    if pos in matched[img]:
                        continue
                    if ov >= best_iou:
                        if best < 0 or ov > best_iou:
                            best, best_iou = pos, ov
                if best >= 0:
                    matched[img].add(best)
                    tp[d] = 1.0
            per_class[c][t] = interpolated_ap(tp, n_gt, cfg.recall_points)
    per_threshold = {
        t: float(np.mean([per_class[c][t] for c in classes])) if classes else 0.0
        for t in cfg.iou_thresholds
    }
    return ApResult(per_threshold, per_class)

"""Mask NMS: Hard, Soft, Fast and Matrix NMS, plus a scalar Matrix NMS oracle.

All algorithms sort by descending score with ties broken by input position,
and predictions of different classes never suppress each other. Each public
function takes an :class:`InstanceSet` of binary masks; the ``*_kernel``
variants take a pre-computed IoU matrix (used by the benchmark, which, like
the original measurements, excludes IoU time).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from solokit import _backend
from solokit.masks import Instance, InstanceSet, iou, iou_matrix


@dataclass(frozen=True)
class DecayKind:
    """Score decay ``f(iou)``: linear ``1 - iou`` or gaussian ``exp(-iou**2 / sigma)``."""

    kind: str = "gaussian"
    sigma: float = 0.5

    def __post_init__(self):
        if self.kind not in ("linear", "gaussian"):
            raise ValueError(f"unknown decay kind {self.kind!r}")
        if self.kind == "gaussian" and not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @classmethod
    def linear(cls) -> "DecayKind":
        return cls("linear")

    @classmethod
    def gaussian(cls, sigma: float = 0.5) -> "DecayKind":
        return cls("gaussian", sigma)

    @property
    def code(self) -> int:
        return 1 if self.kind == "gaussian" else 0

    def __call__(self, x: float) -> float:
        if self.kind == "gaussian":
            return math.exp(-(x * x) / self.sigma)
        return 1.0 - x


@dataclass(frozen=True)
class ScoredDecay:
    """Intermediate Matrix NMS state, all arrays in sorted order."""

    sorted_indices: np.ndarray
    ious: np.ndarray
    ious_cmax: np.ndarray
    decay: np.ndarray

    @property
    def upper(self) -> np.ndarray:
        return np.triu(self.ious, k=1)


def sort_order(scores) -> np.ndarray:
    """Descending-score permutation, ties kept in input order."""
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


def _prepare(s: InstanceSet, num_threads=None):
    order = sort_order(s.scores)
    labels = np.ascontiguousarray(s.class_ids[order])
    if len(s) == 0:
        return order, np.zeros((0, 0)), labels
    ious = iou_matrix(s.mask_stack()[order], num_threads=num_threads)
    return order, np.ascontiguousarray(ious), labels


def _rescored(s: InstanceSet, idx, scores) -> InstanceSet:
    return s.with_instances(
        Instance(float(sc), s[i].class_id, s[i].mask) for i, sc in zip(idx, scores)
    )


def hard_nms_kernel(ious, labels, iou_threshold: float, backend=None) -> np.ndarray:
    k = backend or _backend.kernels()
    return k.hard_nms(ious, labels, float(iou_threshold))


def fast_nms_kernel(ious, labels, iou_threshold: float, backend=None, num_threads=None) -> np.ndarray:
    k = backend or _backend.kernels()
    return k.fast_nms(ious, labels, float(iou_threshold), _backend.threads(num_threads))


def soft_nms_kernel(ious, labels, scores, decay: DecayKind, score_floor: float, backend=None):
    k = backend or _backend.kernels()
    return k.soft_nms(ious, labels, np.asarray(scores, dtype=np.float64), decay.code,
                      float(decay.sigma), float(score_floor))


def matrix_nms_kernel(ious, labels, decay: DecayKind, backend=None, num_threads=None):
    k = backend or _backend.kernels()
    return k.matrix_nms(ious, labels, decay.code, float(decay.sigma), _backend.threads(num_threads))


def hard_nms(s: InstanceSet, iou_threshold: float = 0.5) -> InstanceSet:
    """Greedy NMS: keep a prediction iff its IoU with every kept same-class one is <= threshold."""
    order, ious, labels = _prepare(s)
    keep = hard_nms_kernel(ious, labels, iou_threshold)
    idx = order[keep]
    return _rescored(s, idx, s.scores[idx])


def fast_nms(s: InstanceSet, iou_threshold: float = 0.5, num_threads=None) -> InstanceSet:
    """One-shot NMS: drop a prediction if any higher-scored same-class one overlaps it
    above threshold, whether or not that one survives."""
    order, ious, labels = _prepare(s, num_threads)
    keep = fast_nms_kernel(ious, labels, iou_threshold, num_threads=num_threads)
    idx = order[keep]
    return _rescored(s, idx, s.scores[idx])


def soft_nms(s: InstanceSet, decay: DecayKind = DecayKind.gaussian(), score_floor: float = 0.001) -> InstanceSet:
    """Sequential Soft-NMS. Output is in pop order and carries decayed scores."""
    order, ious, labels = _prepare(s)
    pops, scores = soft_nms_kernel(ious, labels, s.scores[order], decay, score_floor)
    return _rescored(s, order[pops], scores[pops])


def matrix_nms_decay(s: InstanceSet, decay: DecayKind = DecayKind.gaussian(), num_threads=None) -> ScoredDecay:
    order, ious, labels = _prepare(s, num_threads)
    cmax, dec = matrix_nms_kernel(ious, labels, decay, num_threads=num_threads)
    return ScoredDecay(order, ious, cmax, dec)


def matrix_nms(s: InstanceSet, decay: DecayKind = DecayKind.gaussian(), num_threads=None) -> InstanceSet:
    """Rescore every prediction by its Matrix NMS decay factor.

    Nothing is removed; the result is in descending original-score order and
    thresholding/top-k is left to the caller.
    """
    state = matrix_nms_decay(s, decay, num_threads)
    idx = state.sorted_indices
    return _rescored(s, idx, s.scores[idx] * state.decay)


def matrix_nms_oracle(s: InstanceSet, decay: DecayKind = DecayKind.gaussian()) -> InstanceSet:
    """Scalar double-loop evaluation of the Matrix NMS decay, for testing.

    "Higher-scored" means earlier in the stable sort, so ties resolve the same
    way as :func:`matrix_nms`. A suppressor whose own compensation factor is
    zero (it duplicates an earlier prediction) contributes no penalty.
    """
    order = sort_order(s.scores)
    insts = [s[i] for i in order]
    n = len(insts)
    pair = {}
    for j in range(n):
        for i in range(j):
            if insts[i].class_id == insts[j].class_id:
                pair[i, j] = iou(insts[i].mask, insts[j].mask)

    # f(iou_{., i}): min over higher-scored k of f(iou_{k, i}); empty min is f(0) = 1
    comp = []
    for i in range(n):
        vals = [decay(pair[k, i]) for k in range(i) if (k, i) in pair]
        comp.append(min(vals) if vals else 1.0)

    out = []
    for j in range(n):
        best = 1.0
        for i in range(j):
            if (i, j) not in pair or comp[i] == 0.0:
                continue
            best = min(best, decay(pair[i, j]) / comp[i])
        out.append(insts[j].score * best)
    return _rescored(s, order, out)

"""NMS timing on a seeded synthetic corpus, IoU matrix pre-computed."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from solokit import _backend
from solokit.masks import iou_matrix
from solokit.nms import (DecayKind, fast_nms_kernel, hard_nms_kernel, matrix_nms_kernel, soft_nms_kernel,
                         sort_order)
from solokit.pipeline import generate_scene

METHODS = ("hard", "soft", "fast", "matrix")


@dataclass(frozen=True)
class BenchRow:
    method: str
    n: int
    median_ms: float


@dataclass(frozen=True)
class BenchResult:
    rows: tuple[BenchRow, ...]
    outputs: dict  # method -> kept flags or rescored scores, sorted order
    backend: str

    def median(self, method: str) -> float:
        return next(r.median_ms for r in self.rows if r.method == method)

    def tsv(self) -> str:
        return "".join(f"{r.method}\t{r.n}\t{r.median_ms:.6f}\n" for r in self.rows)


def build_corpus(n: int, mask_size=(64, 64), profile: str = "moderate", seed: int = 0):
    """Sorted IoU matrix, labels and scores for ``n`` single-class masks."""
    h, w = mask_size
    scene = generate_scene(seed, h, w, n, profile, n_classes=1)
    scores = np.random.default_rng(seed + 1).uniform(0.05, 1.0, size=n)
    order = sort_order(scores)
    ious = np.ascontiguousarray(iou_matrix(scene.gts.mask_stack()[order]))
    labels = np.ascontiguousarray(scene.gts.class_ids[order])
    return ious, labels, np.ascontiguousarray(scores[order]), scene


def bench_nms(n: int = 500, mask_size=(64, 64), repeats: int = 11, profile: str = "moderate", seed: int = 0,
              backend: str = "auto", iou_threshold: float = 0.5, decay: DecayKind = DecayKind.gaussian(),
              score_floor: float = 0.001, num_threads=None) -> BenchResult:
    """Median wall time of each NMS method on one corpus.

    IoU computation is excluded: every method receives the same pre-computed
    matrix, as in the usual like-for-like comparison.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    k = _backend.get(backend)
    ious, labels, scores, _ = build_corpus(n, mask_size, profile, seed)
    threads = _backend.threads(num_threads)
    calls = {
        "hard": lambda: hard_nms_kernel(ious, labels, iou_threshold, backend=k),
        "soft": lambda: soft_nms_kernel(ious, labels, scores, decay, score_floor, backend=k),
        "fast": lambda: fast_nms_kernel(ious, labels, iou_threshold, backend=k, num_threads=threads),
        "matrix": lambda: scores * matrix_nms_kernel(ious, labels, decay, backend=k, num_threads=threads)[1],
    }
    rows = []
    outputs = {}
    for method in METHODS:
        fn = calls[method]
        outputs[method] = fn()  # warm-up, also the recorded output
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn()
            times.append(time.perf_counter() - t0)
        rows.append(BenchRow(method, n, float(np.median(times)) * 1e3))
    return BenchResult(tuple(rows), outputs, k.NAME)

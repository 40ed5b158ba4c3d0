"""Inference on supplied head outputs, and the seeded synthetic scene generator."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from solokit import nms as _nms
from solokit.head import GridCell, KernelBank, dynamic_logits, upsample_bilinear
from solokit.masks import BinaryMask, Instance, InstanceSet, SoftMask, iou_matrix, maskness


@dataclass(frozen=True)
class NmsConfig:
    method: str = "matrix"
    decay: _nms.DecayKind = _nms.DecayKind.gaussian()
    iou_threshold: float = 0.5
    score_floor: float = 0.001

    def __post_init__(self):
        if self.method not in ("matrix", "hard", "soft", "fast"):
            raise ValueError(f"unknown NMS method {self.method!r}")

    def apply(self, s: InstanceSet) -> InstanceSet:
        if self.method == "matrix":
            return _nms.matrix_nms(s, self.decay)
        if self.method == "hard":
            return _nms.hard_nms(s, self.iou_threshold)
        if self.method == "soft":
            return _nms.soft_nms(s, self.decay, self.score_floor)
        return _nms.fast_nms(s, self.iou_threshold)


@dataclass(frozen=True)
class PipelineConfig:
    score_threshold: float = 0.1
    mask_threshold: float = 0.5
    top_k: int = 500
    nms: NmsConfig = field(default_factory=NmsConfig)
    final_score_threshold: float = 0.05
    max_detections: int = 100

    def __post_init__(self):
        for name in ("score_threshold", "mask_threshold", "final_score_threshold"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if self.top_k < 1 or self.max_detections < 1:
            raise ValueError("top_k and max_detections must be >= 1")


def run_inference(category_scores: Sequence[np.ndarray], kernels: Sequence[KernelBank], mask_feature: np.ndarray,
                  cfg: PipelineConfig = PipelineConfig(),
                  output_size: Optional[tuple[int, int]] = None) -> InstanceSet:
    """Turn per-level category scores and kernel banks into final instances.

    ``category_scores[l]`` is an (S, S, C) array of probabilities and
    ``kernels[l]`` the matching :class:`KernelBank`; every kernel runs over the
    shared ``mask_feature``. NMS works on feature-resolution masks; survivors
    are upsampled as soft masks and binarized at ``output_size``.
    """
    if len(category_scores) != len(kernels):
        raise ValueError(f"{len(category_scores)} score levels but {len(kernels)} kernel banks")
    mask_feature = np.asarray(mask_feature, dtype=np.float64)
    fh, fw = mask_feature.shape[:2]
    out_h, out_w = output_size or (fh, fw)

    cands = []
    for lv, (scores, bank) in enumerate(zip(category_scores, kernels)):
        scores = np.asarray(scores, dtype=np.float64)
        s = bank.grid_size
        if scores.shape[:2] != (s, s):
            raise ValueError(f"level {lv}: scores {scores.shape[:2]} vs kernel grid {s}")
        for k, c in zip(*np.nonzero(scores.reshape(s * s, -1) > cfg.score_threshold)):
            cands.append((float(scores.reshape(s * s, -1)[k, c]), lv, int(k), int(c)))
    # stable: equal scores keep (level, cell, class) order
    cands.sort(key=lambda t: -t[0])
    cands = cands[:cfg.top_k]

    soft = []
    insts = []
    for score, lv, k, c in cands:
        bank = kernels[lv]
        p = SoftMask.from_logits(dynamic_logits(bank, GridCell.from_index(k, bank.grid_size, lv), mask_feature))
        fg = p.values > cfg.mask_threshold
        if not fg.any():
            continue
        soft.append(p)
        insts.append(Instance(score * maskness(p, cfg.mask_threshold), c, BinaryMask(fg)))
    if not insts:
        return InstanceSet(out_h, out_w, ())

    low = InstanceSet(fh, fw, tuple(insts))
    kept = cfg.nms.apply(low)

    # map survivors back to their soft masks by identity
    source = {id(inst.mask): n for n, inst in enumerate(insts)}
    final = [(inst, source[id(inst.mask)]) for inst in kept if inst.score >= cfg.final_score_threshold]
    final.sort(key=lambda t: -t[0].score)
    final = final[:cfg.max_detections]

    out = []
    for inst, n in final:
        if (out_h, out_w) == (fh, fw):
            mask = inst.mask
        else:
            up = upsample_bilinear(soft[n].values, out_h, out_w)[..., 0]
            mask = BinaryMask(up > cfg.mask_threshold)
        out.append(Instance(inst.score, inst.class_id, mask))
    return InstanceSet(out_h, out_w, tuple(out))


OVERLAP_PROFILES = ("disjoint", "moderate", "heavy")


@dataclass(frozen=True)
class Shape:
    kind: str  # "rect" or "disk"
    params: tuple[float, ...]  # rect: (y0, x0, y1, x1) half-open; disk: (cy, cx, r)
    class_id: int

    def render(self, height: int, width: int) -> BinaryMask:
        yy, xx = np.mgrid[0:height, 0:width]
        if self.kind == "rect":
            y0, x0, y1, x1 = self.params
            bits = (yy >= y0) & (yy < y1) & (xx >= x0) & (xx < x1)
        else:
            cy, cx, r = self.params
            bits = (yy + 0.5 - cy) ** 2 + (xx + 0.5 - cx) ** 2 <= r * r
            # a disk never renders empty: keep the pixel holding its centre
            bits[min(max(int(cy), 0), height - 1), min(max(int(cx), 0), width - 1)] = True
        return BinaryMask(bits)


@dataclass(frozen=True)
class SyntheticScene:
    height: int
    width: int
    shapes: tuple[Shape, ...]
    gts: InstanceSet


def _disjoint_shapes(rng, height, width, n, n_classes):
    cols = int(np.ceil(np.sqrt(n))) if n else 1
    rows = int(np.ceil(n / cols)) if n else 1
    ch, cw = height / rows, width / cols
    shapes = []
    for k in range(n):
        r, c = divmod(k, cols)
        # integer cell bounds; cells never share a pixel
        y0, y1 = int(np.ceil(r * ch)), int(np.floor((r + 1) * ch))
        x0, x1 = int(np.ceil(c * cw)), int(np.floor((c + 1) * cw))
        if y1 <= y0 or x1 <= x0:
            raise ValueError(f"{n} disjoint shapes do not fit in {height}x{width}")
        hh = int(rng.integers(1, y1 - y0 + 1))
        ww = int(rng.integers(1, x1 - x0 + 1))
        ty = y0 + int(rng.integers(0, y1 - y0 - hh + 1))
        tx = x0 + int(rng.integers(0, x1 - x0 - ww + 1))
        if rng.random() < 0.5 or min(hh, ww) < 3:
            shapes.append(Shape("rect", (ty, tx, ty + hh, tx + ww), int(rng.integers(n_classes))))
        else:
            rad = min(hh, ww) / 2.0
            shapes.append(Shape("disk", (ty + hh / 2.0, tx + ww / 2.0, rad), int(rng.integers(n_classes))))
    return shapes


def _overlapping_shapes(rng, height, width, n, n_classes, heavy):
    shapes = []
    lo = max(2, min(height, width) // 8)
    hi = max(lo + 1, min(height, width) // 3)
    anchors = rng.uniform(0.2, 0.8, size=(max(1, n // 8), 2)) * (height, width)
    for _ in range(n):
        hh, ww = int(rng.integers(lo, hi + 1)), int(rng.integers(lo, hi + 1))
        if heavy:
            cy, cx = anchors[rng.integers(len(anchors))] + rng.normal(0, lo / 3.0, size=2)
        else:
            cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        cy = float(np.clip(cy, hh / 2, height - hh / 2))
        cx = float(np.clip(cx, ww / 2, width - ww / 2))
        cls = int(rng.integers(n_classes))
        if rng.random() < 0.5:
            y0, x0 = int(round(cy - hh / 2)), int(round(cx - ww / 2))
            shapes.append(Shape("rect", (y0, x0, y0 + hh, x0 + ww), cls))
        else:
            shapes.append(Shape("disk", (cy, cx, min(hh, ww) / 2.0), cls))
    return shapes


def generate_scene(seed: int, height: int, width: int, n_shapes: int, overlap_profile: str = "moderate",
                   n_classes: int = 3) -> SyntheticScene:
    """Seeded scene of rectangles and disks.

    ``disjoint`` places each shape inside its own tile so no two overlap;
    ``moderate`` scatters shapes uniformly; ``heavy`` clusters them around a
    few anchors so pairwise IoUs are high.
    """
    if n_shapes < 0:
        raise ValueError("n_shapes must be >= 0")
    if overlap_profile not in OVERLAP_PROFILES:
        raise ValueError(f"unknown overlap profile {overlap_profile!r}")
    rng = np.random.default_rng(seed)
    if overlap_profile == "disjoint":
        shapes = _disjoint_shapes(rng, height, width, n_shapes, n_classes)
    else:
        shapes = _overlapping_shapes(rng, height, width, n_shapes, n_classes, overlap_profile == "heavy")
    insts = []
    for sh in shapes:
        m = sh.render(height, width)
        insts.append(Instance(1.0, sh.class_id, m))
    return SyntheticScene(height, width, tuple(shapes), InstanceSet(height, width, tuple(insts)))


def iou_histogram(scene: SyntheticScene, bins: int = 10) -> tuple[np.ndarray, np.ndarray]:
    """Histogram of off-diagonal pairwise IoUs of the scene's masks."""
    n = len(scene.gts)
    if n < 2:
        return np.zeros(bins, dtype=np.int64), np.linspace(0, 1, bins + 1)
    m = iou_matrix(scene.gts.mask_stack())
    vals = m[np.triu_indices(n, k=1)]
    return np.histogram(vals, bins=bins, range=(0.0, 1.0))


@dataclass(frozen=True)
class DemoInputs:
    category_scores: tuple[np.ndarray, ...]
    kernels: tuple[KernelBank, ...]
    mask_feature: np.ndarray


def selector_inputs(scene: SyntheticScene, grids: Sequence[int] = (12,), epsilon: float = 0.2,
                    n_classes: Optional[int] = None, score: float = 0.9, logit: float = 10.0) -> DemoInputs:
    """Fabricate head outputs that reproduce the scene exactly.

    Feature channel g holds +logit inside ground truth g and -logit outside;
    every positive cell of g (per label assignment) scores ``score`` for its
    class and carries a one-hot kernel selecting channel g.
    """
    from solokit.head import GridSpec, assign_labels

    gts = list(scene.gts)
    n = len(gts)
    n_classes = n_classes or (max((g.class_id for g in gts), default=0) + 1)
    feat = np.full((scene.height, scene.width, max(n, 1)), -logit)
    for g, inst in enumerate(gts):
        feat[inst.mask.bits, g] = logit
    spec = GridSpec.from_grids(grids)
    assignment = assign_labels([(g.mask, g.class_id) for g in gts], spec, epsilon) if gts else None
    scores = [np.zeros((lv.grid_size, lv.grid_size, n_classes)) for lv in spec.levels]
    weights = [np.zeros((lv.grid_size, lv.grid_size, max(n, 1))) for lv in spec.levels]
    # a cell claimed twice serves the smaller instance: larger ones write first
    order = sorted(assignment.positives if assignment else (), key=lambda q: -gts[q.gt_index].mask.area())
    for pos in order:
        c = pos.cell
        scores[c.level][c.i, c.j, pos.category_target] = score
        weights[c.level][c.i, c.j, :] = 0.0
        weights[c.level][c.i, c.j, pos.gt_index] = 1.0
    return DemoInputs(tuple(scores), tuple(KernelBank(w) for w in weights), feat)


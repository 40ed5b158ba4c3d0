"""SOLO head geometry: grids, label assignment, coordinate channels, category
feature alignment and the vanilla / decoupled / dynamic mask assemblies.

Tensors are numpy float64 arrays laid out (H, W, C), channel fastest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from solokit.masks import BinaryMask, DimensionMismatch, SoftMask, mask_to_bbox, sigmoid

DEFAULT_GRIDS = (40, 36, 24, 16, 12)
DENSE_GRIDS = (80, 64, 32, 24, 12)
DEFAULT_SCALE_RANGES = ((0.0, 96.0), (48.0, 192.0), (96.0, 384.0), (192.0, 768.0), (384.0, math.inf))
DEFAULT_STRIDES = (8, 8, 16, 32, 32)
REGION_SAMPLES = 3


@dataclass(frozen=True)
class GridLevel:
    grid_size: int
    stride: int
    scale_range: tuple[float, float]

    def __post_init__(self):
        if self.grid_size < 1:
            raise ValueError("grid size must be positive")
        lo, hi = self.scale_range
        if not lo < hi:
            raise ValueError(f"empty scale range {self.scale_range}")

    def routes(self, scale: float) -> bool:
        lo, hi = self.scale_range
        return lo <= scale < hi


@dataclass(frozen=True)
class GridSpec:
    levels: tuple[GridLevel, ...]

    @classmethod
    def from_grids(cls, grids: Sequence[int] = DEFAULT_GRIDS, strides=None, scale_ranges=None) -> "GridSpec":
        """Build a spec from grid sizes, filling strides and ranges from the defaults.

        With fewer than five levels the default ranges are truncated and the
        last level is left open-ended; a single level takes every scale.
        """
        n = len(grids)
        if n == 0:
            raise ValueError("need at least one level")
        if strides is None:
            strides = (DEFAULT_STRIDES + (DEFAULT_STRIDES[-1],) * n)[:n]
        if scale_ranges is None:
            if n == 1:
                scale_ranges = [(0.0, math.inf)]
            else:
                base = list(DEFAULT_SCALE_RANGES[:n])
                while len(base) < n:
                    lo = base[-1][0] * 2
                    base[-1] = (base[-1][0], lo * 2)
                    base.append((lo, math.inf))
                base[-1] = (base[-1][0], math.inf)
                scale_ranges = base
        return cls(tuple(GridLevel(int(g), int(s), (float(r[0]), float(r[1])))
                         for g, s, r in zip(grids, strides, scale_ranges)))

    @classmethod
    def default(cls) -> "GridSpec":
        return cls.from_grids(DEFAULT_GRIDS)

    @classmethod
    def dense(cls) -> "GridSpec":
        return cls.from_grids(DENSE_GRIDS)


@dataclass(frozen=True)
class GridCell:
    level: int
    i: int
    j: int
    grid_size: int

    def __post_init__(self):
        if not (0 <= self.i < self.grid_size and 0 <= self.j < self.grid_size):
            raise IndexError(f"cell ({self.i}, {self.j}) outside a {self.grid_size}x{self.grid_size} grid")

    @property
    def k(self) -> int:
        return self.i * self.grid_size + self.j

    @classmethod
    def from_index(cls, k: int, grid_size: int, level: int = 0) -> "GridCell":
        return cls(level, k // grid_size, k % grid_size, grid_size)


@dataclass(frozen=True)
class KernelBank:
    """Per-cell dynamic kernels, weights shaped (S, S, D).

    For 3x3 kernels D = 9E and each cell's weights unpack to (3, 3, E).
    """

    weights: np.ndarray
    kernel_size: int = 1

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 3 or w.shape[0] != w.shape[1]:
            raise ValueError(f"kernel weights must be (S, S, D), got {w.shape}")
        if self.kernel_size not in (1, 3):
            raise ValueError("kernel_size must be 1 or 3")
        if self.kernel_size == 3 and w.shape[2] % 9:
            raise ValueError(f"3x3 kernels need D divisible by 9, got D={w.shape[2]}")
        object.__setattr__(self, "weights", w)

    @property
    def grid_size(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        d = self.weights.shape[2]
        return d if self.kernel_size == 1 else d // 9


@dataclass(frozen=True)
class Positive:
    cell: GridCell
    gt_index: int
    category_target: int
    mask_target: BinaryMask


@dataclass(frozen=True)
class AssignmentResult:
    positives: tuple[Positive, ...] = field(default_factory=tuple)

    def __len__(self):
        return len(self.positives)

    def cells(self) -> list[tuple[int, int, int, int]]:
        """(level, i, j, gt_index) rows."""
        return [(p.cell.level, p.cell.i, p.cell.j, p.gt_index) for p in self.positives]


def coord_channels(height: int, width: int) -> np.ndarray:
    """(H, W, 2) tensor: channel 0 the column coordinate, channel 1 the row, both in [-1, 1]."""
    if height < 1 or width < 1:
        raise ValueError("extents must be >= 1")
    xs = np.linspace(-1.0, 1.0, width) if width > 1 else np.zeros(1)
    ys = np.linspace(-1.0, 1.0, height) if height > 1 else np.zeros(1)
    out = np.empty((height, width, 2))
    out[..., 0] = xs[None, :]
    out[..., 1] = ys[:, None]
    return out


def _as_tensor3(f) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    if f.ndim == 2:
        f = f[..., None]
    if f.ndim != 3:
        raise ValueError(f"expected an (H, W, C) tensor, got shape {f.shape}")
    return f


def _source_coords(n_in: int, n_out: int) -> np.ndarray:
    # align-corners; a single output sample sits at the centre
    if n_out == 1:
        return np.array([(n_in - 1) / 2.0])
    return np.arange(n_out) * ((n_in - 1) / (n_out - 1))


def _sample_bilinear(f: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Bilinear samples of f at the grid ys x xs (index coordinates)."""
    h, w = f.shape[:2]
    ys = np.clip(ys, 0, h - 1)
    xs = np.clip(xs, 0, w - 1)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    top = f[y0][:, x0] * (1 - wx) + f[y0][:, x1] * wx
    bot = f[y1][:, x0] * (1 - wx) + f[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def upsample_bilinear(f, out_h: int, out_w: int) -> np.ndarray:
    """Align-corners bilinear resize of every channel."""
    if out_h < 1 or out_w < 1:
        raise ValueError("output extents must be >= 1")
    f = _as_tensor3(f)
    h, w = f.shape[:2]
    if (h, w) == (out_h, out_w):
        return f.copy()
    return _sample_bilinear(f, _source_coords(h, out_h), _source_coords(w, out_w))


def _adaptive_max_pool(f: np.ndarray, s: int) -> np.ndarray:
    h, w, c = f.shape
    out = np.empty((s, s, c))
    for i in range(s):
        r0, r1 = (i * h) // s, -((-(i + 1) * h) // s)
        for j in range(s):
            c0, c1 = (j * w) // s, -((-(j + 1) * w) // s)
            out[i, j] = f[r0:r1, c0:c1].max(axis=(0, 1))
    return out


def _region_grid(f: np.ndarray, s: int, samples: int = REGION_SAMPLES) -> np.ndarray:
    # P x P lattice spanning the first to last pixel centre inside each cell
    h, w, _ = f.shape

    def lattice(n):
        size = n / s
        frac = np.linspace(0.0, 1.0, samples) if samples > 1 else np.array([0.5])
        return [i * size + frac * (size - 1.0) for i in range(s)]

    ly, lx = lattice(h), lattice(w)
    out = np.empty((s, s, f.shape[2]))
    for i in range(s):
        for j in range(s):
            out[i, j] = _sample_bilinear(f, ly[i], lx[j]).mean(axis=(0, 1))
    return out


def align_category_features(f, s: int, mode: str = "interpolate") -> np.ndarray:
    """Resample an (H, W, C) feature map onto the S x S category grid.

    ``mode`` is ``interpolate`` (bilinear), ``adaptive_pool`` (adaptive max
    pooling) or ``region_grid`` (mean of bilinear samples inside each cell).
    """
    f = _as_tensor3(f)
    h, w = f.shape[:2]
    if s > min(h, w):
        raise ValueError(f"grid {s} larger than feature map {h}x{w}")
    if mode == "interpolate":
        return upsample_bilinear(f, s, s)
    if mode == "adaptive_pool":
        return _adaptive_max_pool(f, s)
    if mode == "region_grid":
        return _region_grid(f, s)
    raise ValueError(f"unknown alignment mode {mode!r}")


def downsample_max(m: BinaryMask, stride: int) -> BinaryMask:
    """Max-pool a binary mask by ``stride`` (ragged last block included)."""
    if stride == 1:
        return m
    h, w = m.shape
    oh, ow = -(-h // stride), -(-w // stride)
    padded = np.zeros((oh * stride, ow * stride), dtype=bool)
    padded[:h, :w] = m.bits
    return BinaryMask(padded.reshape(oh, stride, ow, stride).any(axis=(1, 3)))


def center_region(mask: BinaryMask, epsilon: float) -> tuple[float, float, float, float]:
    """(x0, y0, x1, y1) of the shrunken box around the mass centre, in continuous pixel units."""
    rows, cols = np.nonzero(mask.bits)
    cx = cols.mean() + 0.5
    cy = rows.mean() + 0.5
    box = mask_to_bbox(mask)
    hw, hh = epsilon * box.width / 2.0, epsilon * box.height / 2.0
    return (cx - hw, cy - hh, cx + hw, cy + hh)


def cell_region(height: int, width: int, s: int, i: int, j: int) -> tuple[float, float, float, float]:
    return (j * width / s, i * height / s, (j + 1) * width / s, (i + 1) * height / s)


def _span(lo: float, hi: float, extent: int, s: int) -> range:
    # cells whose open interval overlaps (lo, hi)
    size = extent / s
    first = max(int(math.floor(lo / size)), 0)
    last = min(int(math.ceil(hi / size)) - 1, s - 1)
    return range(first, last + 1)


def assign_labels(gts: Sequence[tuple[BinaryMask, int]], spec: GridSpec, epsilon: float = 0.2) -> AssignmentResult:
    """Mark grid cells positive for each ground truth's centre region.

    ``gts`` holds (mask, class_id) pairs at image resolution. An instance goes
    to every level whose scale range holds sqrt(w*h); there, each cell whose
    rectangle overlaps the centre region with positive area is positive. A
    cell claimed by several ground truths is listed once for each of them.
    """
    if not 0 < epsilon <= 1:
        raise ValueError("epsilon must be in (0, 1]")
    if not gts:
        return AssignmentResult()
    height, width = gts[0][0].shape
    infos = []
    for g, (mask, cls) in enumerate(gts):
        if mask.shape != (height, width):
            raise DimensionMismatch(f"ground truth {g} has extents {mask.shape}")
        if mask.is_empty():
            raise ValueError(f"ground truth {g} has an empty mask")
        box = mask_to_bbox(mask)
        infos.append((g, int(cls), mask, math.sqrt(box.width * box.height), center_region(mask, epsilon)))

    claims: list[tuple[int, int, int, int, int]] = []
    for g, cls, mask, scale, (x0, y0, x1, y1) in infos:
        for lv, level in enumerate(spec.levels):
            if not level.routes(scale):
                continue
            s = level.grid_size
            for i in _span(y0, y1, height, s):
                ci = cell_region(height, width, s, i, 0)
                if min(y1, ci[3]) - max(y0, ci[1]) <= 0:
                    continue
                for j in _span(x0, x1, width, s):
                    cj = cell_region(height, width, s, i, j)
                    if min(x1, cj[2]) - max(x0, cj[0]) <= 0:
                        continue
                    claims.append((lv, i, j, g, cls))

    targets = {}
    positives = []
    for lv, i, j, g, cls in sorted(claims):
        level = spec.levels[lv]
        key = (lv, g)
        if key not in targets:
            targets[key] = downsample_max(gts[g][0], level.stride)
        positives.append(Positive(GridCell(lv, i, j, level.grid_size), g, cls, targets[key]))
    return AssignmentResult(tuple(positives))


def assemble_vanilla(m, cell: GridCell) -> SoftMask:
    """Sigmoid of channel k = i*S + j of an S^2-channel logit tensor."""
    m = _as_tensor3(m)
    s = cell.grid_size
    if m.shape[2] != s * s:
        raise DimensionMismatch(f"expected {s * s} channels, got {m.shape[2]}")
    return SoftMask.from_logits(m[:, :, cell.k])


def assemble_decoupled(x, y, cell: GridCell) -> SoftMask:
    """sigmoid(x[..., j]) * sigmoid(y[..., i]) from S-channel column and row logits."""
    x = _as_tensor3(x)
    y = _as_tensor3(y)
    s = cell.grid_size
    if x.shape != y.shape:
        raise DimensionMismatch(f"x {x.shape} and y {y.shape} differ")
    if x.shape[2] != s:
        raise DimensionMismatch(f"expected {s} channels, got {x.shape[2]}")
    return SoftMask(sigmoid(x[:, :, cell.j]) * sigmoid(y[:, :, cell.i]))


def dynamic_logits(bank: KernelBank, cell: GridCell, f) -> np.ndarray:
    """Raw response of one cell's kernel over the feature map (zero-padded for 3x3)."""
    f = _as_tensor3(f)
    e = bank.in_channels
    if f.shape[2] != e:
        raise DimensionMismatch(f"feature has {f.shape[2]} channels, kernels expect {e}")
    if cell.grid_size != bank.grid_size:
        raise DimensionMismatch(f"cell grid {cell.grid_size} vs bank grid {bank.grid_size}")
    w = bank.weights[cell.i, cell.j]
    if bank.kernel_size == 1:
        return f @ w
    w = w.reshape(3, 3, e)
    h, wd = f.shape[:2]
    padded = np.zeros((h + 2, wd + 2, e))
    padded[1:-1, 1:-1] = f
    out = np.zeros((h, wd))
    for dy in range(3):
        for dx in range(3):
            out += padded[dy:dy + h, dx:dx + wd] @ w[dy, dx]
    return out


def dynamic_conv(bank: KernelBank, cell: GridCell, f) -> SoftMask:
    return SoftMask.from_logits(dynamic_logits(bank, cell, f))


def assemble_decoupled_dynamic(banks: Sequence[KernelBank], cell: GridCell, f) -> SoftMask:
    """Product of the sigmoided responses of A kernel groups, group a reading
    the a-th contiguous slice of feature channels."""
    f = _as_tensor3(f)
    a = len(banks)
    if a < 1:
        raise ValueError("need at least one kernel group")
    widths = [b.in_channels for b in banks]
    if sum(widths) != f.shape[2] or len({b.kernel_size for b in banks}) != 1:
        raise DimensionMismatch(f"group widths {widths} inconsistent with {f.shape[2]} feature channels")
    start = 0
    out = None
    for bank, width in zip(banks, widths):
        part = dynamic_conv(bank, cell, f[:, :, start:start + width]).values
        out = part if out is None else out * part
        start += width
    return SoftMask(out)

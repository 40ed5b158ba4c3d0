"""Mask representations, IoU kernels, RLE codec and mask statistics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np

from solokit import _backend


class DimensionMismatch(ValueError):
    """Raised when masks or tensors that must share extents do not."""


class RleError(ValueError):
    """Raised for run-length encodings that violate the codec invariants."""


def sigmoid(x):
    """Numerically stable logistic function, evaluated in float64."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """A per-pixel instance mask stored as an immutable (H, W) bool array."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {bits.shape}")
        object.__setattr__(self, "bits", _frozen(bits.astype(bool, copy=True)))

    @classmethod
    def zeros(cls, height: int, width: int) -> "BinaryMask":
        return cls(np.zeros((height, width), dtype=bool))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    def area(self) -> int:
        return int(np.count_nonzero(self.bits))

    def is_empty(self) -> bool:
        return not self.bits.any()

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.bits, other.bits))

    def __hash__(self):
        return hash((self.shape, self.bits.tobytes()))


@dataclass(frozen=True, eq=False)
class SoftMask:
    """A real-valued mask in [0, 1], e.g. a predicted probability map or alpha matte.

    Raw network logits must go through :meth:`from_logits`; the constructor
    rejects values outside the unit interval.
    """

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"soft mask must be 2-D, got shape {values.shape}")
        if values.size and not (np.all(values >= 0.0) and np.all(values <= 1.0)):
            raise ValueError("soft mask values must lie in [0, 1]; use SoftMask.from_logits for logits")
        object.__setattr__(self, "values", _frozen(values.copy()))

    @classmethod
    def from_logits(cls, logits) -> "SoftMask":
        return cls(sigmoid(logits))

    @classmethod
    def from_binary(cls, mask: BinaryMask) -> "SoftMask":
        return cls(mask.bits.astype(np.float64))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def __eq__(self, other):
        if not isinstance(other, SoftMask):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.values, other.values))


Mask = Union[BinaryMask, SoftMask]


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box with half-open pixel extents ``[x_min, x_max) x [y_min, y_max)``."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    @property
    def is_empty(self) -> bool:
        return self.x_max <= self.x_min or self.y_max <= self.y_min

    @property
    def width(self) -> int:
        return max(self.x_max - self.x_min, 0)

    @property
    def height(self) -> int:
        return max(self.y_max - self.y_min, 0)

    def area(self) -> int:
        return self.width * self.height

    def contains(self, row: int, col: int) -> bool:
        return self.x_min <= col < self.x_max and self.y_min <= row < self.y_max

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


EMPTY_BOX = BBox(0, 0, 0, 0)


@dataclass(frozen=True)
class RleMask:
    """Column-major run-length encoding; runs alternate background/foreground, background first."""

    height: int
    width: int
    counts: tuple[int, ...]

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        object.__setattr__(self, "counts", counts)
        if self.height < 0 or self.width < 0:
            raise RleError("negative mask extents")
        if any(c < 0 for c in counts):
            raise RleError("run lengths must be non-negative")
        if sum(counts) != self.height * self.width:
            raise RleError(
                f"run lengths sum to {sum(counts)}, expected {self.height * self.width}"
            )


@dataclass(frozen=True)
class Instance:
    score: float
    class_id: int
    mask: Mask

    def __post_init__(self):
        if self.class_id < 0:
            raise ValueError(f"class_id must be non-negative, got {self.class_id}")
        object.__setattr__(self, "score", float(self.score))
        object.__setattr__(self, "class_id", int(self.class_id))


@dataclass(frozen=True)
class InstanceSet:
    """Scored, classed predictions sharing one canonical mask size."""

    height: int
    width: int
    instances: tuple[Instance, ...] = field(default_factory=tuple)

    def __post_init__(self):
        instances = tuple(self.instances)
        object.__setattr__(self, "instances", instances)
        for k, inst in enumerate(instances):
            if inst.mask.shape != (self.height, self.width):
                raise DimensionMismatch(
                    f"instance {k} has mask {inst.mask.shape}, set is {(self.height, self.width)}"
                )

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    def __getitem__(self, k):
        return self.instances[k]

    @property
    def scores(self) -> np.ndarray:
        return np.array([inst.score for inst in self.instances], dtype=np.float64)

    @property
    def class_ids(self) -> np.ndarray:
        return np.array([inst.class_id for inst in self.instances], dtype=np.int64)

    def mask_stack(self) -> np.ndarray:
        """Binary masks as an (N, H, W) bool array."""
        if not self.instances:
            return np.zeros((0, self.height, self.width), dtype=bool)
        return np.stack([_as_bits(inst.mask) for inst in self.instances])

    def with_instances(self, instances: Iterable[Instance]) -> "InstanceSet":
        return InstanceSet(self.height, self.width, tuple(instances))


def _as_bits(mask: Mask) -> np.ndarray:
    if isinstance(mask, BinaryMask):
        return mask.bits
    raise TypeError("operation requires binary masks; binarize soft masks first")


def _check_same(a, b):
    if a.shape != b.shape:
        raise DimensionMismatch(f"mask extents differ: {a.shape} vs {b.shape}")


def iou(a: BinaryMask, b: BinaryMask) -> float:
    """Intersection over union of two binary masks; 0.0 when both are empty."""
    _check_same(a, b)
    inter = np.count_nonzero(a.bits & b.bits)
    union = np.count_nonzero(a.bits | b.bits)
    if union == 0:
        return 0.0
    return inter / union


def iou_matrix(masks: Sequence[BinaryMask] | np.ndarray, num_threads: int | None = None) -> np.ndarray:
    """Full symmetric N x N IoU matrix.

    Accepts a sequence of :class:`BinaryMask` or an (N, H, W) bool array.
    Intersections are exact integer counts, so the result does not depend on
    the backend or the number of threads.
    """
    if isinstance(masks, np.ndarray):
        stack = masks.astype(bool, copy=False)
        if stack.ndim != 3:
            raise ValueError("mask array must have shape (N, H, W)")
    else:
        if len(masks) == 0:
            raise ValueError("iou_matrix needs at least one mask")
        shape = masks[0].shape
        for m in masks:
            _check_same(masks[0], m)
        stack = np.stack([m.bits for m in masks]) if masks else np.zeros((0,) + shape, bool)
    n = stack.shape[0]
    flat = np.ascontiguousarray(stack.reshape(n, -1)).view(np.uint8)
    return _backend.kernels().iou_matrix(flat, _backend.threads(num_threads))


def maskness(p: SoftMask, threshold: float = 0.5) -> float:
    """Mean soft value over pixels strictly above ``threshold``; 0.0 without foreground."""
    fg = p.values[p.values > threshold]
    if fg.size == 0:
        return 0.0
    return float(fg.mean())


def binarize(p: SoftMask, threshold: float = 0.5) -> BinaryMask:
    return BinaryMask(p.values > threshold)


def mask_to_bbox(m: BinaryMask) -> BBox:
    """Tightest half-open box around the set bits, or :data:`EMPTY_BOX`."""
    rows = np.flatnonzero(m.bits.any(axis=1))
    if rows.size == 0:
        return EMPTY_BOX
    cols = np.flatnonzero(m.bits.any(axis=0))
    return BBox(int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1)


def box_iou(a: BBox, b: BBox) -> float:
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    inter = max(ix, 0) * max(iy, 0)
    union = a.area() + b.area() - inter
    if union <= 0:
        return 0.0
    return inter / union


def rle_encode(m: BinaryMask) -> RleMask:
    flat = m.bits.ravel(order="F")
    if flat.size == 0:
        return RleMask(m.height, m.width, (0,))
    # indices where the value changes, plus both ends
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return RleMask(m.height, m.width, tuple(runs))


def rle_decode(r: RleMask) -> BinaryMask:
    total = r.height * r.width
    if sum(r.counts) != total:
        raise RleError(f"run lengths sum to {sum(r.counts)}, expected {total}")
    values = np.zeros(len(r.counts), dtype=bool)
    values[1::2] = True
    flat = np.repeat(values, np.asarray(r.counts, dtype=np.int64))
    return BinaryMask(flat.reshape((r.height, r.width), order="F"))

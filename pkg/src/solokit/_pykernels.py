"""Reference numpy kernels; used when the compiled extension is unavailable.

Every function here has a twin in ``_ckernels.pyx`` with the same signature.
Inputs are already sorted by descending score; ``ious`` is the full symmetric
IoU matrix in that order and ``labels`` the matching class ids.
"""

import numpy as np

LINEAR = 0
GAUSSIAN = 1

NAME = "python"


def iou_matrix(flat, num_threads=0):
    f = flat.astype(np.float64)
    inter = f @ f.T
    area = f.sum(axis=1)
    union = area[:, None] + area[None, :] - inter
    safe = np.where(union > 0, union, 1.0)
    return np.where(union > 0, inter / safe, 0.0)


def _upper_same_class(ious, labels):
    same = labels[:, None] == labels[None, :]
    return np.triu(np.where(same, ious, 0.0), k=1)


def hard_nms(ious, labels, iou_threshold):
    n = labels.shape[0]
    keep = np.zeros(n, dtype=bool)
    suppressed = np.zeros(n, dtype=bool)
    for i in range(n):
        if suppressed[i]:
            continue
        keep[i] = True
        suppressed |= (ious[i] > iou_threshold) & (labels == labels[i])
    return keep


def fast_nms(ious, labels, iou_threshold, num_threads=0):
    if labels.shape[0] == 0:
        return np.zeros(0, dtype=bool)
    cmax = _upper_same_class(ious, labels).max(axis=0)
    return cmax <= iou_threshold


def soft_nms(ious, labels, scores, kind, sigma, score_floor):
    """Returns (pop order of survivors, decayed scores)."""
    s = scores.astype(np.float64, copy=True)
    alive = np.ones(labels.shape[0], dtype=bool)
    order = []
    while True:
        cand = np.flatnonzero(alive)
        if cand.size == 0:
            break
        i = cand[np.argmax(s[cand])]
        alive[i] = False
        order.append(i)
        rest = alive & (labels == labels[i])
        if kind == GAUSSIAN:
            s[rest] *= np.exp(-(ious[i, rest] ** 2) / sigma)
        else:
            s[rest] *= 1.0 - ious[i, rest]
        alive[rest & (s < score_floor)] = False
    return np.asarray(order, dtype=np.int64), s


def matrix_nms(ious, labels, kind, sigma, num_threads=0):
    """Returns (per-prediction max IoU with a higher-scored one, decay factors)."""
    n = labels.shape[0]
    if n == 0:
        return np.zeros(0), np.zeros(0)
    upper = _upper_same_class(ious, labels)
    cmax = upper.max(axis=0)
    cm = cmax[:, None]
    if kind == GAUSSIAN:
        decay = np.exp(-(upper ** 2 - cm ** 2) / sigma)
    else:
        den = 1.0 - cm
        with np.errstate(divide="ignore", invalid="ignore"):
            # a fully suppressed suppressor exerts no penalty
            decay = np.where(den > 0, (1.0 - upper) / np.where(den > 0, den, 1.0), np.inf)
    return cmax, decay.min(axis=0)

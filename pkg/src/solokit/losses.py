"""Mask and matte losses with analytic gradients w.r.t. the predicted probabilities."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from solokit.masks import BinaryMask, DimensionMismatch, SoftMask

PROB_EPS = 1e-7


@dataclass(frozen=True)
class LossValue:
    value: float
    gradient: Optional[np.ndarray] = None


def _values(m) -> np.ndarray:
    if isinstance(m, BinaryMask):
        return m.bits.astype(np.float64)
    if isinstance(m, SoftMask):
        return m.values
    return np.asarray(m, dtype=np.float64)


def _pair(p, q):
    p, q = _values(p), _values(q)
    if p.shape != q.shape:
        raise DimensionMismatch(f"prediction {p.shape} and target {q.shape} differ")
    return p, q


def _dice_parts(p, q):
    inter = np.sum(p * q)
    denom = np.sum(p * p) + np.sum(q * q)
    return inter, denom


def dice_coefficient(p, q) -> float:
    """2 sum(p q) / (sum p^2 + sum q^2); two all-zero inputs agree perfectly (1.0)."""
    p, q = _pair(p, q)
    inter, denom = _dice_parts(p, q)
    if denom == 0:
        return 1.0
    return float(2.0 * inter / denom)


def dice_loss(p, q, with_grad: bool = False) -> LossValue:
    """1 - dice; the target may be binary or soft."""
    p, q = _pair(p, q)
    inter, denom = _dice_parts(p, q)
    if denom == 0:
        return LossValue(0.0, np.zeros_like(p) if with_grad else None)
    value = 1.0 - 2.0 * inter / denom
    grad = None
    if with_grad:
        grad = -(2.0 * q * denom - 2.0 * p * 2.0 * inter) / (denom * denom)
    return LossValue(float(value), grad)


def _clamped(p):
    pc = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    inside = (p >= PROB_EPS) & (p <= 1.0 - PROB_EPS)
    return pc, inside


def _bce_terms(pc, q):
    pos = -(q * np.log(pc))
    neg = -((1.0 - q) * np.log(1.0 - pc))
    return pos, neg


def weighted_bce_loss(p, q, loss_weight: float = 1.0, positive_weight: float = 1.0,
                      with_grad: bool = False) -> LossValue:
    """loss_weight * mean(w * BCE) with w = positive_weight on target-foreground pixels."""
    p, q = _pair(p, q)
    pc, inside = _clamped(p)
    w = np.where(q == 1.0, positive_weight, 1.0)
    pos, neg = _bce_terms(pc, q)
    value = loss_weight * np.mean(w * (pos + neg))
    grad = None
    if with_grad:
        d = -q / pc + (1.0 - q) / (1.0 - pc)
        grad = np.where(inside, loss_weight * w * d / p.size, 0.0)
    return LossValue(float(value), grad)


def focal_mask_loss(p, q, loss_weight: float = 1.0, alpha: float = 0.25, gamma: float = 2.0,
                    with_grad: bool = False) -> LossValue:
    """Alpha-balanced focal loss averaged over pixels and scaled by loss_weight."""
    p, q = _pair(p, q)
    pc, inside = _clamped(p)
    pos, neg = _bce_terms(pc, q)
    mod_pos = (1.0 - pc) ** gamma
    mod_neg = pc ** gamma
    value = loss_weight * np.mean(alpha * mod_pos * pos + (1.0 - alpha) * mod_neg * neg)
    grad = None
    if with_grad:
        log_p, log_n = np.log(pc), np.log(1.0 - pc)
        if gamma == 0:
            d_mod_pos = np.zeros_like(pc)
            d_mod_neg = np.zeros_like(pc)
        else:
            d_mod_pos = -gamma * (1.0 - pc) ** (gamma - 1.0)
            d_mod_neg = gamma * pc ** (gamma - 1.0)
        d_pos = -alpha * q * (d_mod_pos * log_p + mod_pos / pc)
        d_neg = -(1.0 - alpha) * (1.0 - q) * (d_mod_neg * log_n - mod_neg / (1.0 - pc))
        grad = np.where(inside, loss_weight * (d_pos + d_neg) / p.size, 0.0)
    return LossValue(float(value), grad)


def mae_loss(p, g, with_grad: bool = False) -> LossValue:
    p, g = _pair(p, g)
    diff = p - g
    grad = np.sign(diff) / p.size if with_grad else None
    return LossValue(float(np.mean(np.abs(diff))), grad)


def solo_total_loss(cate_loss: float, mask_losses: Sequence[float], n_pos: int, lam: float = 3.0) -> float:
    """cate_loss + lam * sum(mask_losses) / max(n_pos, 1).

    ``mask_losses`` holds the per-positive mask losses; summing in sorted
    order keeps the total independent of their ordering.
    """
    if n_pos < 0:
        raise ValueError("n_pos must be non-negative")
    total = float(np.sum(np.sort(np.asarray(mask_losses, dtype=np.float64))))
    return float(cate_loss) + lam * total / max(n_pos, 1)


def matte_loss(p, g, with_grad: bool = False) -> LossValue:
    """MAE plus dice against the soft ground-truth matte."""
    mae = mae_loss(p, g, with_grad)
    dice = dice_loss(p, g, with_grad)
    grad = mae.gradient + dice.gradient if with_grad else None
    return LossValue(mae.value + dice.value, grad)

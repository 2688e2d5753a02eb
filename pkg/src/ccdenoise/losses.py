"""Training objective: masked mean-squared error plus softmax cross-entropy."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LossWeights:
    w_r: float = 1.0
    w_c: float = 0.2

    def __post_init__(self):
        for name in ("w_r", "w_c"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


def rms_loss(pred, target, positions=None):
    """Mean squared error over ``positions`` (boolean mask; all pixels when None).

    No square root is taken.  Returns ``(loss, d_pred)`` where the gradient is
    zero outside ``positions``.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    if positions is None:
        n = diff.size
        return float(np.mean(diff * diff)), (2.0 / n) * diff
    mask = np.asarray(positions, dtype=bool)
    if mask.shape != pred.shape:
        raise ValueError(f"position mask shape {mask.shape} does not match {pred.shape}")
    n = int(mask.sum())
    if n == 0:
        raise ValueError("empty position set")
    d = np.where(mask, diff, 0.0)
    return float(np.sum(d * d)) / n, (2.0 / n) * d


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


def cross_entropy(logits, label: int):
    """``log(sum(exp(logits))) - logits[label]`` and its gradient ``softmax - onehot``."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1:
        raise ValueError("logits must be a vector")
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite logits")
    if not 0 <= label < z.size:
        raise ValueError(f"label {label} out of range for {z.size} classes")
    zmax = float(z.max())
    lse = zmax + math.log(float(np.sum(np.exp(z - zmax))))
    grad = softmax(z)
    grad[label] -= 1.0
    return max(lse - float(z[label]), 0.0), grad


def composite_loss(pred, target, positions, logits, label, weights: LossWeights = LossWeights()):
    """``w_r * rms + w_c * ce``.  Returns ``(J, d_pred, d_logits)``."""
    r, d_pred = rms_loss(pred, target, positions)
    c, d_logits = cross_entropy(logits, label)
    return weights.w_r * r + weights.w_c * c, weights.w_r * d_pred, weights.w_c * d_logits

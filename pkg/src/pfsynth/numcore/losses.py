"""Binary cross-entropy on probabilities."""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor, make_result

BCE_EPS = 1e-7


def bce_loss(pred: Tensor, target, eps: float = BCE_EPS) -> Tensor:
    """Mean of ``-[t ln p + (1 - t) ln(1 - p)]`` with ``p`` clamped to [eps, 1 - eps].

    The gradient is zero for predictions sitting on the clamp.
    """
    target = as_tensor(target, pred.dtype)
    if pred.shape != target.shape:
        raise ShapeError(f"bce_loss: prediction shape {pred.shape} != target shape {target.shape}")
    p = np.clip(pred.data, eps, 1.0 - eps)
    t = target.data
    n = p.size
    value = -(t * np.log(p) + (1 - t) * np.log1p(-p)).mean()
    inside = (pred.data >= eps) & (pred.data <= 1.0 - eps)

    def bw(g):
        dp = g * inside * (p - t) / (p * (1 - p)) / n
        return dp.astype(pred.dtype), None

    return make_result(np.asarray(value, dtype=pred.dtype), (pred, target), bw)

"""Training losses with analytic gradients.

Reductions accumulate in 64-bit regardless of the input dtype.
"""

import numpy as np

from ..errors import ShapeError


def soft_dice_loss(pred, target):
    """Average soft Dice loss over the K channels.

    loss = 1 - (1/K) * sum_k [ 2 * sum(Y_k T_k) / sum(Y_k^2 + T_k^2) ]

    pred, target: [K, X, Y, Z]. Returns (loss, grad wrt pred).
    """
    if pred.shape != target.shape:
        raise ShapeError(f"pred {pred.shape} != target {target.shape}")
    K = pred.shape[0]
    if K == 0:
        raise ShapeError("zero channels")
    p = pred.reshape(K, -1).astype(np.float64)
    t = target.reshape(K, -1).astype(np.float64)
    inter = (p * t).sum(axis=1)
    denom = (p * p).sum(axis=1) + (t * t).sum(axis=1)
    denom = np.maximum(denom, 1e-12)
    dice = 2.0 * inter / denom
    loss = 1.0 - dice.mean()
    # d(2N/D)/dp = (2 t D - 4 p N) / D^2
    grad = -(2.0 * t * denom[:, None] - 4.0 * p * inter[:, None]) \
        / (K * denom[:, None] ** 2)
    return float(loss), grad.reshape(pred.shape).astype(pred.dtype)


def sum_squares_loss(pred, target):
    """Sum of squared differences. Returns (loss, grad wrt pred)."""
    p = np.asarray(pred)
    t = np.asarray(target)
    if p.shape != t.shape:
        raise ShapeError(f"pred {p.shape} != target {t.shape}")
    diff = p.astype(np.float64) - t.astype(np.float64)
    loss = float((diff * diff).sum())
    return loss, (2.0 * diff).astype(p.dtype)

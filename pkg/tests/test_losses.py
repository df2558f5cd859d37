"""Loss identities."""

import numpy as np
import pytest

from synthbrain.errors import ShapeError
from synthbrain.nn.losses import soft_dice_loss, sum_squares_loss


def test_perfect_one_hot_prediction_zero_loss():
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 3, (4, 4, 4))
    target = np.stack([(labels == k).astype(np.float32) for k in range(3)])
    loss, grad = soft_dice_loss(target.copy(), target)
    assert loss == 0.0


def test_two_class_uniform_prediction_is_one_third():
    # K=2 one-hot target, uniform 0.5 prediction:
    # per class 2*(0.5 t)/(0.25 n + t) summed over a half/half target
    # reduces to dice 2/3, loss 1/3
    n = 64
    target = np.zeros((2, 4, 4, 4), dtype=np.float64)
    target[0, :2] = 1.0
    target[1, 2:] = 1.0
    pred = np.full((2, 4, 4, 4), 0.5)
    loss, _ = soft_dice_loss(pred, target)
    assert loss == pytest.approx(1.0 / 3.0, abs=1e-6)


def test_dice_loss_range():
    rng = np.random.default_rng(1)
    for _ in range(10):
        p = rng.random((3, 4, 4, 4))
        t = rng.random((3, 4, 4, 4))
        loss, _ = soft_dice_loss(p, t)
        assert 0.0 <= loss <= 1.0


def test_disjoint_prediction_loss_one():
    target = np.zeros((2, 2, 2, 2), dtype=np.float64)
    target[0] = 1.0
    pred = np.zeros_like(target)
    pred[1] = 1.0
    loss, _ = soft_dice_loss(pred, target)
    assert loss == 1.0


def test_dice_shape_mismatch():
    with pytest.raises(ShapeError):
        soft_dice_loss(np.zeros((2, 2, 2, 2)), np.zeros((3, 2, 2, 2)))


def test_sum_squares_basics():
    loss, grad = sum_squares_loss(np.array([1.0, 2.0]),
                                  np.array([0.0, 0.0]))
    assert loss == 5.0
    assert np.array_equal(grad, [2.0, 4.0])
    loss, _ = sum_squares_loss(np.array([3.0]), np.array([3.0]))
    assert loss == 0.0

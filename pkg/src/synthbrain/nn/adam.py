"""Adam optimizer state and update rule (bias-corrected moments)."""

import numpy as np

from ..errors import ShapeError

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8
DEFAULT_LR = 1e-5


class AdamState:
    """First/second moment estimates matching a parameter dict, plus the
    step counter t."""

    def __init__(self, params):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0


def adam_step(params, grads, state, lr=DEFAULT_LR):
    """One in-place Adam update over a flat param dict. Returns params."""
    state.t += 1
    t = state.t
    c1 = 1.0 - BETA1 ** t
    c2 = 1.0 - BETA2 ** t
    for key, p in params.items():
        g = grads[key]
        if g.shape != p.shape:
            raise ShapeError(f"{key}: grad shape {g.shape} != {p.shape}")
        g = g.astype(p.dtype, copy=False)
        m = state.m[key] = BETA1 * state.m[key] + (1 - BETA1) * g
        v = state.v[key] = BETA2 * state.v[key] + (1 - BETA2) * (g * g)
        mhat = m / c1
        vhat = v / c2
        params[key] = p - lr * mhat / (np.sqrt(vhat) + EPS)
    return params

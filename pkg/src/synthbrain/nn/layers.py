"""Network layers with exact analytic gradients.

All feature maps are [C, X, Y, Z] arrays. Layers are stateless w.r.t. data:
forward returns (output, cache) and backward consumes that cache. Parameters
live in plain dicts so the optimizer and the serializer can treat them
uniformly. Batch size is 1 by construction (one volume per step); batch
normalization therefore normalizes over the spatial axes.
"""

import numpy as np

from .. import kernels
from ..errors import ShapeError

ELU_ALPHA = 1.0
BN_EPS = 1e-5
BN_MOMENTUM = 0.95


class Layer:
    """Base layer: subclasses define params/buffers and forward/backward."""

    def __init__(self, name):
        self.name = name
        self.params = {}   # learnable
        self.buffers = {}  # persistent but not learned (running moments)

    def forward(self, x, mode="train"):
        raise NotImplementedError

    def backward(self, cache, gy):
        """Returns (grad_input, grad_params dict)."""
        raise NotImplementedError


class Conv(Layer):
    """3D same-size cross-correlation (zero padding), kernel k in {3, 5}."""

    def __init__(self, name, in_channels, out_channels, kernel, rng):
        super().__init__(name)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        fan_in = in_channels * kernel ** 3
        limit = np.sqrt(6.0 / fan_in)  # He-uniform
        self.params["w"] = rng.uniform(
            -limit, limit, (out_channels, in_channels) + (kernel,) * 3
        ).astype(np.float32)
        self.params["b"] = np.zeros(out_channels, dtype=np.float32)

    def forward(self, x, mode="train"):
        if x.shape[0] != self.in_channels:
            raise ShapeError(f"{self.name}: expected {self.in_channels} "
                             f"input channels, got {x.shape[0]}")
        w = self.params["w"].astype(x.dtype, copy=False)
        b = self.params["b"].astype(x.dtype, copy=False)
        y = kernels.conv3d_forward(np.ascontiguousarray(x), w, b)
        return y, x

    def backward(self, cache, gy):
        x = cache
        w = self.params["w"].astype(x.dtype, copy=False)
        gx, gw, gb = kernels.conv3d_backward(
            np.ascontiguousarray(x), w, np.ascontiguousarray(gy))
        return gx, {"w": gw, "b": gb}


class BatchNorm(Layer):
    """Per-channel normalization over the spatial axes.

    Statistics are always computed from the current input (instance-norm
    semantics: one volume per forward pass, so batch moments degenerate to
    per-sample moments, and a running average over the heavily randomized
    training stream describes no individual scan). Train mode additionally
    maintains running moments as diagnostics and tracks gradients through
    the statistics.
    """

    def __init__(self, name, channels):
        super().__init__(name)
        self.channels = channels
        self.params["gamma"] = np.ones(channels, dtype=np.float32)
        self.params["beta"] = np.zeros(channels, dtype=np.float32)
        self.buffers["running_mean"] = np.zeros(channels, dtype=np.float32)
        self.buffers["running_var"] = np.ones(channels, dtype=np.float32)

    def forward(self, x, mode="train"):
        if x.shape[0] != self.channels:
            raise ShapeError(f"{self.name}: expected {self.channels} "
                             f"channels, got {x.shape[0]}")
        gamma = self.params["gamma"].astype(x.dtype, copy=False)
        beta = self.params["beta"].astype(x.dtype, copy=False)
        mean = x.mean(axis=(1, 2, 3), dtype=np.float64)
        var = x.var(axis=(1, 2, 3), dtype=np.float64)
        if mode == "train":
            m = BN_MOMENTUM
            self.buffers["running_mean"] = (
                m * self.buffers["running_mean"] + (1 - m) * mean
            ).astype(np.float32)
            self.buffers["running_var"] = (
                m * self.buffers["running_var"] + (1 - m) * var
            ).astype(np.float32)
        inv = (1.0 / np.sqrt(var + BN_EPS)).astype(x.dtype)
        mean = mean.astype(x.dtype)
        xhat = (x - mean[:, None, None, None]) * inv[:, None, None, None]
        y = gamma[:, None, None, None] * xhat + beta[:, None, None, None]
        return y, (xhat, inv, mode)

    def backward(self, cache, gy):
        xhat, inv, mode = cache
        gamma = self.params["gamma"].astype(gy.dtype, copy=False)
        n = xhat[0].size
        ggamma = (gy * xhat).sum(axis=(1, 2, 3), dtype=np.float64)
        gbeta = gy.sum(axis=(1, 2, 3), dtype=np.float64)
        gxhat = gy * gamma[:, None, None, None]
        if mode == "train":
            # gradient through the batch statistics
            gx = (inv[:, None, None, None] / n) * (
                n * gxhat
                - gxhat.sum(axis=(1, 2, 3), keepdims=True)
                - xhat * (gxhat * xhat).sum(axis=(1, 2, 3), keepdims=True))
        else:
            gx = gxhat * inv[:, None, None, None]
        return gx.astype(gy.dtype, copy=False), {
            "gamma": ggamma.astype(np.float32),
            "beta": gbeta.astype(np.float32)}


class Elu(Layer):
    def __init__(self, name="elu"):
        super().__init__(name)

    def forward(self, x, mode="train"):
        neg = ELU_ALPHA * np.expm1(np.minimum(x, 0))
        y = np.where(x > 0, x, neg)
        return y.astype(x.dtype, copy=False), (x > 0, neg)

    def backward(self, cache, gy):
        pos, neg = cache
        gx = gy * np.where(pos, 1.0, neg + ELU_ALPHA)
        return gx.astype(gy.dtype, copy=False), {}


class Softmax(Layer):
    """Softmax across the channel axis: each voxel sums to 1."""

    def __init__(self, name="softmax"):
        super().__init__(name)

    def forward(self, x, mode="train"):
        shifted = x - x.max(axis=0, keepdims=True)
        e = np.exp(shifted)
        y = e / e.sum(axis=0, keepdims=True)
        return y.astype(x.dtype, copy=False), y

    def backward(self, cache, gy):
        y = cache
        dot = (gy * y).sum(axis=0, keepdims=True)
        gx = y * (gy - dot)
        return gx.astype(gy.dtype, copy=False), {}


class MaxPool2(Layer):
    def __init__(self, name="maxpool"):
        super().__init__(name)

    def forward(self, x, mode="train"):
        if any(d % 2 for d in x.shape[1:]):
            raise ShapeError(f"{self.name}: odd spatial dims {x.shape[1:]}")
        y, arg = kernels.maxpool2_forward(np.ascontiguousarray(x))
        return y, arg

    def backward(self, cache, gy):
        return kernels.maxpool2_backward(cache, np.ascontiguousarray(gy)), {}


class Upsample2(Layer):
    """Nearest-neighbour factor-2 upsampling."""

    def __init__(self, name="upsample"):
        super().__init__(name)

    def forward(self, x, mode="train"):
        y = np.repeat(np.repeat(np.repeat(x, 2, axis=1), 2, axis=2), 2, axis=3)
        return np.ascontiguousarray(y), x.shape

    def backward(self, cache, gy):
        C, X, Y, Z = cache
        g = gy.reshape(C, X, 2, Y, 2, Z, 2)
        gx = g.sum(axis=(2, 4, 6), dtype=np.float64)
        return gx.astype(gy.dtype, copy=False), {}


class GlobalMaxPool(Layer):
    """Max over all spatial positions per channel: [C,X,Y,Z] -> [C]."""

    def __init__(self, name="gmp"):
        super().__init__(name)

    def forward(self, x, mode="train"):
        flat = x.reshape(x.shape[0], -1)
        arg = flat.argmax(axis=1)
        y = flat[np.arange(x.shape[0]), arg]
        return y, (x.shape, arg)

    def backward(self, cache, gy):
        shape, arg = cache
        gx = np.zeros((shape[0], int(np.prod(shape[1:]))), dtype=gy.dtype)
        gx[np.arange(shape[0]), arg] = gy
        return gx.reshape(shape), {}

"""The three network architectures, built from the layer primitives.

* segmenter: UNet; two convs + batchnorm per level, features double after
  each pool and halve after each upsample, skips on all levels, softmax head.
* denoiser: lighter UNet; one conv per level, constant feature width, skip
  connections suppressed between the top two (finest) levels.
* regressor: encoder-only with 5x5x5 convs, two trailing convs at the output
  width, and a global max-pooling head producing one score per QC region.

Forward records a tape; backward replays it in reverse, so gradients are
exact for the composed network. One network instance owns one tape: do not
interleave forward/backward calls from multiple threads.
"""

import json
from dataclasses import dataclass, asdict

import numpy as np

from ..errors import ShapeError, ValidationError
from ..rng import RngStream
from .layers import (BatchNorm, Conv, Elu, GlobalMaxPool, MaxPool2, Softmax,
                     Upsample2)

ROLES = ("segmenter", "denoiser", "regressor")


@dataclass(frozen=True)
class NetworkSpec:
    role: str
    in_channels: int
    out_channels: int
    levels: int = 5
    base_features: int = 24

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValidationError(f"unknown role {self.role!r}")
        if self.levels < 2:
            raise ValidationError("at least 2 levels required")
        if min(self.in_channels, self.out_channels, self.base_features) < 1:
            raise ValidationError("channel counts must be positive")

    @property
    def pool_factor(self):
        return 2 ** (self.levels - 1)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc):
        return cls(**doc)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1)


class Network:
    def __init__(self, spec: NetworkSpec, seed=0):
        self.spec = spec
        self.layers = {}
        self._order = []
        rng = RngStream(seed, stream=0xA11)
        builder = {"segmenter": self._build_segmenter,
                   "denoiser": self._build_denoiser,
                   "regressor": self._build_regressor}[spec.role]
        self._plan = builder(rng)
        self._tape = None
        self._grads = None

    # -- construction -------------------------------------------------------

    def _add(self, layer):
        self.layers[layer.name] = layer
        self._order.append(layer.name)
        return layer.name

    def _conv(self, name, cin, cout, kernel, rng):
        return self._add(Conv(name, cin, cout, kernel, rng))

    def _build_segmenter(self, rng):
        s = self.spec
        feats = [s.base_features * 2 ** i for i in range(s.levels)]
        plan = []
        cin = s.in_channels
        for i, f in enumerate(feats):
            plan.append(("layer", self._conv(f"enc{i}_conv1", cin, f, 3, rng)))
            plan.append(("layer", self._add(Elu(f"enc{i}_elu1"))))
            plan.append(("layer", self._conv(f"enc{i}_conv2", f, f, 3, rng)))
            plan.append(("layer", self._add(Elu(f"enc{i}_elu2"))))
            plan.append(("layer", self._add(BatchNorm(f"enc{i}_bn", f))))
            if i < s.levels - 1:
                plan.append(("save_skip", i))
                plan.append(("layer", self._add(MaxPool2(f"enc{i}_pool"))))
            cin = f
        for i in range(s.levels - 2, -1, -1):
            f = feats[i]
            plan.append(("layer", self._add(Upsample2(f"dec{i}_up"))))
            plan.append(("concat", i, f))
            cin = f + feats[i + 1]
            plan.append(("layer", self._conv(f"dec{i}_conv1", cin, f, 3, rng)))
            plan.append(("layer", self._add(Elu(f"dec{i}_elu1"))))
            plan.append(("layer", self._conv(f"dec{i}_conv2", f, f, 3, rng)))
            plan.append(("layer", self._add(Elu(f"dec{i}_elu2"))))
            plan.append(("layer", self._add(BatchNorm(f"dec{i}_bn", f))))
        plan.append(("layer", self._conv(
            "out_conv", feats[0], s.out_channels, 3, rng)))
        plan.append(("layer", self._add(Softmax("out_softmax"))))
        return plan

    def _build_denoiser(self, rng):
        s = self.spec
        w = s.base_features
        suppressed = {0, 1}  # finest two levels: no skip connections
        plan = []
        cin = s.in_channels
        for i in range(s.levels):
            plan.append(("layer", self._conv(f"enc{i}_conv", cin, w, 3, rng)))
            plan.append(("layer", self._add(Elu(f"enc{i}_elu"))))
            plan.append(("layer", self._add(BatchNorm(f"enc{i}_bn", w))))
            if i < s.levels - 1:
                if i not in suppressed:
                    plan.append(("save_skip", i))
                plan.append(("layer", self._add(MaxPool2(f"enc{i}_pool"))))
            cin = w
        for i in range(s.levels - 2, -1, -1):
            plan.append(("layer", self._add(Upsample2(f"dec{i}_up"))))
            cin = w
            if i not in suppressed:
                plan.append(("concat", i, w))
                cin = 2 * w
            plan.append(("layer", self._conv(f"dec{i}_conv", cin, w, 3, rng)))
            plan.append(("layer", self._add(Elu(f"dec{i}_elu"))))
            plan.append(("layer", self._add(BatchNorm(f"dec{i}_bn", w))))
        plan.append(("layer", self._conv(
            "out_conv", w, s.out_channels, 3, rng)))
        plan.append(("layer", self._add(Softmax("out_softmax"))))
        return plan

    def _build_regressor(self, rng):
        s = self.spec
        feats = [s.base_features * 2 ** i for i in range(s.levels)]
        plan = []
        cin = s.in_channels
        for i, f in enumerate(feats):
            plan.append(("layer", self._conv(f"enc{i}_conv1", cin, f, 5, rng)))
            plan.append(("layer", self._add(Elu(f"enc{i}_elu1"))))
            plan.append(("layer", self._conv(f"enc{i}_conv2", f, f, 5, rng)))
            plan.append(("layer", self._add(Elu(f"enc{i}_elu2"))))
            plan.append(("layer", self._add(BatchNorm(f"enc{i}_bn", f))))
            if i < s.levels - 1:
                plan.append(("layer", self._add(MaxPool2(f"enc{i}_pool"))))
            cin = f
        k = s.out_channels
        plan.append(("layer", self._conv("head_conv1", cin, k, 5, rng)))
        plan.append(("layer", self._add(Elu("head_elu"))))
        plan.append(("layer", self._conv("head_conv2", k, k, 5, rng)))
        plan.append(("layer", self._add(GlobalMaxPool("head_gmp"))))
        return plan

    # -- execution -----------------------------------------------------------

    def check_input(self, x):
        if x.ndim != 4 or x.shape[0] != self.spec.in_channels:
            raise ShapeError(
                f"expected [{self.spec.in_channels}, X, Y, Z] input, got "
                f"shape {x.shape}")
        factor = self.spec.pool_factor
        bad = [d for d in x.shape[1:] if d % factor]
        if bad:
            need = [int(np.ceil(d / factor) * factor) for d in x.shape[1:]]
            raise ShapeError(
                f"spatial dims {x.shape[1:]} not divisible by {factor}; "
                f"pad to {tuple(need)}")

    def forward(self, x, mode="train"):
        self.check_input(x)
        tape = []
        skips = {}
        for op in self._plan:
            if op[0] == "layer":
                layer = self.layers[op[1]]
                x, cache = layer.forward(x, mode)
                tape.append(("layer", layer, cache))
            elif op[0] == "save_skip":
                skips[op[1]] = x
                tape.append(("save_skip", op[1]))
            elif op[0] == "concat":
                _, idx, c = op
                x = np.concatenate([skips[idx], x], axis=0)
                tape.append(("concat", idx, c))
        self._tape = tape
        return x

    def backward(self, gy):
        if self._tape is None:
            raise ShapeError("backward called without a preceding forward")
        grads = {name: {} for name in self._order}
        skip_grads = {}
        g = gy
        for entry in reversed(self._tape):
            if entry[0] == "layer":
                _, layer, cache = entry
                g, gparams = layer.backward(cache, g)
                for pname, gp in gparams.items():
                    if pname in grads[layer.name]:
                        grads[layer.name][pname] = \
                            grads[layer.name][pname] + gp
                    else:
                        grads[layer.name][pname] = gp
            elif entry[0] == "concat":
                _, idx, c = entry
                prev = skip_grads.get(idx)
                skip_grads[idx] = g[:c] if prev is None else prev + g[:c]
                g = g[c:]
            elif entry[0] == "save_skip":
                idx = entry[1]
                if idx in skip_grads:
                    g = g + skip_grads.pop(idx)
        self._tape = None
        self._grads = grads
        return g

    # -- parameter access ----------------------------------------------------

    def params(self):
        """Flat ordered dict 'layer.param' -> array (the live arrays)."""
        out = {}
        for name in self._order:
            for pname, arr in self.layers[name].params.items():
                out[f"{name}.{pname}"] = arr
        return out

    def buffers(self):
        out = {}
        for name in self._order:
            for bname, arr in self.layers[name].buffers.items():
                out[f"{name}.{bname}"] = arr
        return out

    def grads(self):
        """Gradients from the last backward, keyed like params()."""
        out = {}
        for name in self._order:
            for pname in self.layers[name].params:
                g = self._grads.get(name, {}).get(pname)
                if g is None:
                    g = np.zeros_like(self.layers[name].params[pname])
                out[f"{name}.{pname}"] = g
        return out

    def set_params(self, flat):
        for key, arr in flat.items():
            lname, pname = key.rsplit(".", 1)
            store = (self.layers[lname].params
                     if pname in self.layers[lname].params
                     else self.layers[lname].buffers)
            if store[pname].shape != arr.shape:
                raise ShapeError(
                    f"{key}: shape {arr.shape} != {store[pname].shape}")
            store[pname] = arr.astype(np.float32, copy=True)

    def state(self):
        """params + buffers, for serialization."""
        out = dict(self.params())
        out.update(self.buffers())
        return out


def build_network(spec: NetworkSpec, seed=0) -> Network:
    return Network(spec, seed=seed)


def pad_to_factor(data, factor):
    """Symmetrically zero-pad trailing spatial axes of [C,X,Y,Z] (or [X,Y,Z])
    to multiples of factor. Returns (padded, crop slices)."""
    spatial = data.shape[-3:]
    pads = []
    crops = []
    for d in spatial:
        total = (-d) % factor
        lo = total // 2
        hi = total - lo
        pads.append((lo, hi))
        crops.append(slice(lo, lo + d))
    if data.ndim == 4:
        full_pads = [(0, 0)] + pads
    else:
        full_pads = pads
    return np.pad(data, full_pads), tuple(crops)

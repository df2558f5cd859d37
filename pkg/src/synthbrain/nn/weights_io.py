"""Weight serialization: a JSON manifest (ordered names + shapes) next to a
little-endian float32 blob. The manifest order is contractual: it must match
the network's layer order exactly on load."""

import json
import os

import numpy as np

from ..errors import ShapeError, ValidationError

MANIFEST_SUFFIX = ".json"
BLOB_SUFFIX = ".bin"


def save_weights(state, path_prefix):
    """state: flat ordered dict name -> float32 array."""
    manifest = {"format": "synthbrain-weights-v1", "entries": []}
    chunks = []
    for name, arr in state.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        manifest["entries"].append({"name": name, "shape": list(arr.shape)})
        chunks.append(arr.tobytes())
    with open(str(path_prefix) + MANIFEST_SUFFIX, "w") as f:
        json.dump(manifest, f, indent=1)
    with open(str(path_prefix) + BLOB_SUFFIX, "wb") as f:
        f.write(b"".join(chunks))


def load_weights(path_prefix, expected_names=None):
    """Returns the flat dict in manifest order.

    expected_names, when given, must match the manifest exactly and in
    order (order carries the layer topology)."""
    mpath = str(path_prefix) + MANIFEST_SUFFIX
    bpath = str(path_prefix) + BLOB_SUFFIX
    if not os.path.exists(mpath) or not os.path.exists(bpath):
        raise ValidationError(f"missing weights files at {path_prefix}")
    with open(mpath) as f:
        manifest = json.load(f)
    if manifest.get("format") != "synthbrain-weights-v1":
        raise ValidationError(f"{mpath}: unknown weights format")
    names = [e["name"] for e in manifest["entries"]]
    if expected_names is not None:
        expected = list(expected_names)
        if names != expected:
            for i, (got, want) in enumerate(zip(names, expected)):
                if got != want:
                    raise ShapeError(
                        f"{mpath}: manifest entry {i} is {got!r}, "
                        f"expected {want!r} (order is contractual)")
            raise ShapeError(
                f"{mpath}: manifest has {len(names)} entries, "
                f"expected {len(expected)}")
    blob = open(bpath, "rb").read()
    out = {}
    offset = 0
    for entry in manifest["entries"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        nbytes = n * 4
        if offset + nbytes > len(blob):
            raise ShapeError(
                f"{bpath}: blob truncated at layer {entry['name']!r}")
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=offset)
        out[entry["name"]] = arr.reshape(shape).astype(np.float32)
        offset += nbytes
    if offset != len(blob):
        raise ShapeError(f"{bpath}: {len(blob) - offset} trailing bytes")
    return out

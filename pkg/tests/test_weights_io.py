"""Weight serialization round-trips and corruption diagnostics."""

import json

import numpy as np
import pytest

from synthbrain.errors import ShapeError, ValidationError
from synthbrain.nn.network import NetworkSpec, build_network
from synthbrain.nn.weights_io import load_weights, save_weights


@pytest.fixture
def state():
    rng = np.random.default_rng(0)
    return {
        "enc0_conv.w": rng.normal(size=(4, 1, 3, 3, 3)).astype(np.float32),
        "enc0_conv.b": rng.normal(size=4).astype(np.float32),
        "enc0_bn.gamma": np.ones(4, dtype=np.float32),
    }


def test_round_trip_bit_exact(state, tmp_path):
    prefix = tmp_path / "w"
    save_weights(state, prefix)
    loaded = load_weights(prefix, expected_names=list(state))
    assert list(loaded) == list(state)
    for k in state:
        assert np.array_equal(loaded[k], state[k])
        assert loaded[k].dtype == np.float32


def test_network_state_round_trip(tmp_path):
    net = build_network(NetworkSpec("segmenter", 1, 3, levels=2,
                                    base_features=4), seed=3)
    prefix = tmp_path / "net"
    save_weights(net.state(), prefix)
    loaded = load_weights(prefix, expected_names=list(net.state()))
    for k, v in net.state().items():
        assert np.array_equal(loaded[k], v)


def test_truncated_blob_names_offending_layer(state, tmp_path):
    prefix = tmp_path / "w"
    save_weights(state, prefix)
    blob = (tmp_path / "w.bin").read_bytes()
    (tmp_path / "w.bin").write_bytes(blob[:-8])
    with pytest.raises(ShapeError, match="enc0_bn.gamma"):
        load_weights(prefix)


def test_trailing_bytes_rejected(state, tmp_path):
    prefix = tmp_path / "w"
    save_weights(state, prefix)
    with open(tmp_path / "w.bin", "ab") as f:
        f.write(b"\0" * 4)
    with pytest.raises(ShapeError, match="trailing"):
        load_weights(prefix)


def test_name_permutation_rejected(state, tmp_path):
    prefix = tmp_path / "w"
    save_weights(state, prefix)
    swapped = list(state)
    swapped[0], swapped[1] = swapped[1], swapped[0]
    with pytest.raises(ShapeError, match="order is contractual"):
        load_weights(prefix, expected_names=swapped)


def test_missing_and_extra_names_rejected(state, tmp_path):
    prefix = tmp_path / "w"
    save_weights(state, prefix)
    with pytest.raises(ShapeError, match="entries"):
        load_weights(prefix, expected_names=list(state) + ["extra.w"])


def test_missing_files_and_bad_format(state, tmp_path):
    with pytest.raises(ValidationError, match="missing"):
        load_weights(tmp_path / "nope")
    prefix = tmp_path / "w"
    save_weights(state, prefix)
    doc = json.loads((tmp_path / "w.json").read_text())
    doc["format"] = "other"
    (tmp_path / "w.json").write_text(json.dumps(doc))
    with pytest.raises(ValidationError, match="format"):
        load_weights(prefix)

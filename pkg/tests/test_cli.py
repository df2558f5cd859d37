"""Command-line interface: reproducibility, exit codes, cohort modes."""

import csv
import hashlib
import json
import os

import numpy as np
import pytest

from synthbrain.cli import main
from synthbrain.nifti import nifti_read, nifti_write
from synthbrain.phantom import make_phantom_corpus
from synthbrain.schema import QC_REGIONS, default_schema

TRAIN_JOB = {
    "train": {"steps": 2, "lr": 1e-3, "seed": 5,
              "priors": {"rotation_deg": [-5, 5], "scale": [0.95, 1.05],
                         "translation_mm": [-2, 2], "elastic_std_mm": [0, 1],
                         "noise_std": [0, 0.02], "spacing_mm": [1, 2]}},
    "network": {"levels": 2, "base_features": 2},
}


def file_digest(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


def tree_digest(root, skip=()):
    out = {}
    for dirpath, _, names in os.walk(root):
        for n in sorted(names):
            if n in skip:
                continue
            rel = os.path.relpath(os.path.join(dirpath, n), root)
            out[rel] = file_digest(os.path.join(dirpath, n))
    return out


@pytest.fixture(scope="module")
def maps_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("maps")
    for i, vol in enumerate(make_phantom_corpus(60, 2, dims=(16, 16, 16))):
        nifti_write(vol, d / f"map_{i}.nii.gz")
    return str(d)


def test_generate_runs_are_byte_identical(maps_dir, tmp_path):
    outs = []
    for name in ("a", "b"):
        out = str(tmp_path / name)
        assert main(["generate", "--maps", maps_dir, "--n", "2",
                     "--seed", "3", "--out", out]) == 0
        outs.append(tree_digest(out))
    assert outs[0] == outs[1]
    assert "manifest.json" in outs[0]
    assert "resolved_config.json" in outs[0]
    assert "pair_0000_image.nii.gz" in outs[0]
    # a different seed changes the data
    out = str(tmp_path / "c")
    main(["generate", "--maps", maps_dir, "--n", "2", "--seed", "4",
          "--out", out])
    assert tree_digest(out)["pair_0000_image.nii.gz"] != \
        outs[0]["pair_0000_image.nii.gz"]


def test_generate_manifest_records_params(maps_dir, tmp_path):
    out = tmp_path / "gen"
    main(["generate", "--maps", maps_dir, "--n", "1", "--seed", "1",
          "--out", str(out)])
    doc = json.loads((out / "manifest.json").read_text())
    assert len(doc["pairs"]) == 1
    params = doc["pairs"][0]["params"]
    assert "gmm_mean" in params and "spacing_mm" in params
    img = nifti_read(str(out / "pair_0000_image.nii.gz"))
    lab = nifti_read(str(out / "pair_0000_labels.nii.gz"), as_labels=True)
    assert img.data.shape == lab.labels.shape


def test_train_runs_are_byte_identical(maps_dir, tmp_path):
    cfg = tmp_path / "job.json"
    cfg.write_text(json.dumps(TRAIN_JOB))
    digests = []
    for name in ("a", "b"):
        out = str(tmp_path / name)
        assert main(["train", "--role", "s1", "--config", str(cfg),
                     "--maps", maps_dir, "--out", out]) == 0
        # the step log carries wall-clock times; compare its content
        # structurally and everything else byte-for-byte
        digests.append(tree_digest(out, skip=("s1_train_log.jsonl",)))
        log = [json.loads(l) for l in
               open(os.path.join(out, "s1_train_log.jsonl"))]
        digests.append([(l["step"], l["loss"]) for l in log])
    assert digests[0] == digests[2]
    assert digests[1] == digests[3]
    assert "s1.bin" in digests[0] and "s1_resolved_config.json" in digests[0]


def test_train_dependency_error_exit_code(maps_dir, tmp_path):
    cfg = tmp_path / "job.json"
    cfg.write_text(json.dumps(TRAIN_JOB))
    out = str(tmp_path / "bundle")
    assert main(["train", "--role", "d", "--config", str(cfg),
                 "--maps", maps_dir, "--out", out]) == 5
    assert main(["train", "--role", "r", "--config", str(cfg),
                 "--maps", maps_dir, "--out", out]) == 5


def test_train_seed_override(maps_dir, tmp_path):
    cfg = tmp_path / "job.json"
    cfg.write_text(json.dumps(TRAIN_JOB))
    out = str(tmp_path / "s")
    main(["train", "--role", "s1", "--config", str(cfg), "--maps", maps_dir,
          "--seed", "99", "--out", out])
    doc = json.loads(open(os.path.join(out, "s1_resolved_config.json")).read())
    assert doc["seed"] == 99


def test_segment_requires_bundle(tmp_path, maps_dir):
    scan = os.path.join(maps_dir, os.listdir(maps_dir)[0])
    assert main(["segment", "--i", scan, "--bundle", str(tmp_path / "nope"),
                 "--o", str(tmp_path / "out")]) == 4


def test_missing_maps_dir(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["generate", "--maps", str(empty), "--n", "1",
                 "--out", str(tmp_path / "o")]) == 4


# -- cohort ---------------------------------------------------------------------

def write_cohort_csv(path, rows, fields):
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)


def base_row(rng, i):
    return {"subject": f"sub-{i:03d}",
            "age": round(float(rng.uniform(20, 90)), 2),
            "gender": int(rng.integers(0, 2)),
            "spacing_sag": round(float(rng.uniform(1, 4)), 2),
            "spacing_cor": round(float(rng.uniform(1, 4)), 2),
            "spacing_ax": round(float(rng.uniform(1, 4)), 2)}


def test_cohort_ageing_mode(tmp_path):
    rng = np.random.default_rng(0)
    rows = []
    for i in range(60):
        r = base_row(rng, i)
        r["left hippocampus"] = 5000.0 - 12.0 * r["age"] \
            + float(rng.normal(0, 5))
        rows.append(r)
    csv_path = tmp_path / "cohort.csv"
    write_cohort_csv(csv_path, rows, list(rows[0]))
    out = tmp_path / "ageing.json"
    assert main(["cohort", "--volumes", str(csv_path), "--mode", "ageing",
                 "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    traj = doc["left hippocampus"]["trajectory"]
    assert traj[0] > traj[-1]  # volume shrinks with age
    assert len(traj) == len(doc["left hippocampus"]["age_grid"])


def test_cohort_effectsize_mode(tmp_path):
    rng = np.random.default_rng(1)
    rows = []
    for i in range(80):
        r = base_row(rng, i)
        r["group"] = "patient" if i % 2 else "control"
        shift = -400.0 if r["group"] == "patient" else 0.0
        r["left hippocampus"] = 5000.0 + shift + float(rng.normal(0, 50))
        r["icv"] = 1.4e6 + float(rng.normal(0, 1e4))
        rows.append(r)
    csv_path = tmp_path / "cohort.csv"
    write_cohort_csv(csv_path, rows, list(rows[0]))
    out = tmp_path / "es.json"
    assert main(["cohort", "--volumes", str(csv_path), "--mode",
                 "effectsize", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["groups"] == ["control", "patient"]
    assert doc["effect_sizes"]["left hippocampus"] > 2.0
    assert "icv" not in doc["effect_sizes"]


def test_cohort_effectsize_needs_two_groups(tmp_path):
    rng = np.random.default_rng(2)
    rows = []
    for i in range(10):
        r = base_row(rng, i)
        r["group"] = "only"
        r["left hippocampus"] = 5000.0
        rows.append(r)
    csv_path = tmp_path / "cohort.csv"
    write_cohort_csv(csv_path, rows, list(rows[0]))
    assert main(["cohort", "--volumes", str(csv_path), "--mode",
                 "effectsize", "--out", str(tmp_path / "o.json")]) == 6


def test_cohort_qcfilter_mode(tmp_path):
    rng = np.random.default_rng(3)
    rows = []
    for i in range(4):
        r = base_row(rng, i)
        r["left hippocampus"] = 4000.0 + i
        r["left thalamus"] = 6000.0 + i
        r["qc_hippocampus"] = 0.9 if i != 2 else 0.4
        r["qc_thalamus"] = 0.9
        rows.append(r)
    csv_path = tmp_path / "cohort.csv"
    write_cohort_csv(csv_path, rows, list(rows[0]))
    out = tmp_path / "qc.json"
    assert main(["cohort", "--volumes", str(csv_path), "--mode", "qcfilter",
                 "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert len(doc["rows"]) == 4
    assert doc["rows"][2]["left hippocampus"] is None
    assert doc["rows"][2]["left thalamus"] == 6002.0
    assert doc["dropped"] == [
        {"row": 2, "region": "hippocampus", "score": 0.4}]


def test_cohort_table_diagnostics(tmp_path):
    # missing required column
    bad = tmp_path / "bad.csv"
    bad.write_text("subject,age\nsub-1,50\n")
    assert main(["cohort", "--volumes", str(bad), "--mode", "ageing",
                 "--out", str(tmp_path / "o.json")]) == 6
    # non-numeric cell names line and column
    rng = np.random.default_rng(4)
    rows = [base_row(rng, i) for i in range(3)]
    rows[1]["age"] = "unknown"
    csv_path = tmp_path / "bad2.csv"
    write_cohort_csv(csv_path, rows, list(rows[0]))
    assert main(["cohort", "--volumes", str(csv_path), "--mode", "ageing",
                 "--out", str(tmp_path / "o.json")]) == 6
    # empty file
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert main(["cohort", "--volumes", str(empty), "--mode", "ageing",
                 "--out", str(tmp_path / "o.json")]) == 6

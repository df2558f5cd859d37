"""Command-line interface.

Subcommands: generate (synthetic training pairs), train (one network role
into a bundle directory), segment (full pipeline over a scan), cohort
(population statistics over a volume table). Every randomized command takes
a seed and writes its resolved configuration next to its outputs, so a run
can be reproduced from the output directory alone.

Exit codes: 0 success; nonzero codes come from the error class (see
errors module); diagnostics go to stderr.
"""

import argparse
import csv
import json
import os
import sys

import numpy as np

from .errors import (CohortTableError, DependencyError, SynthbrainError,
                     ValidationError)
from .nifti import nifti_read, nifti_write
from .nn.network import Network, NetworkSpec
from .nn.weights_io import load_weights, save_weights
from .pipeline import (BUNDLE_FORMAT, BUNDLE_MANIFEST, ModelBundle,
                       QC_THRESHOLD, STAGES, qc_filter, segment_full,
                       stage_channels, volume_report)
from .rng import RngStream
from .schema import QC_REGIONS, default_schema
from .stats import ageing_fit, ageing_predict, cohens_d, covariate_correct
from .synthgen import GenPriors, generate_pair
from .trainer import (TrainConfig, train_denoiser, train_regressor,
                      train_segmenter)

# rng stream tags (distinct from per-step training streams via child())
_STREAM_GENERATE = 0
_STREAM_CORPUS = 1


def _load_labelmaps(maps_dir):
    paths = sorted(
        os.path.join(maps_dir, n) for n in os.listdir(maps_dir)
        if n.endswith((".nii", ".nii.gz")))
    if not paths:
        raise ValidationError(f"no NIfTI label maps in {maps_dir}")
    return [nifti_read(p, as_labels=True) for p in paths]


def _write_json(doc, path):
    with open(path, "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")


# -- generate -----------------------------------------------------------------

def cmd_generate(args):
    labelmaps = _load_labelmaps(args.maps)
    priors = GenPriors.load(args.priors) if args.priors else GenPriors()
    os.makedirs(args.out, exist_ok=True)
    records = []
    for i in range(args.n):
        rng = RngStream(args.seed, stream=i).child(_STREAM_GENERATE + 1)
        image, labels, params = generate_pair(labelmaps, priors, rng)
        img_name = f"pair_{i:04d}_image.nii.gz"
        lab_name = f"pair_{i:04d}_labels.nii.gz"
        nifti_write(image, os.path.join(args.out, img_name))
        nifti_write(labels, os.path.join(args.out, lab_name))
        records.append({"image": img_name, "labels": lab_name,
                        "params": params.to_dict()})
    _write_json({"pairs": records}, os.path.join(args.out, "manifest.json"))
    _write_json({"command": "generate", "seed": args.seed, "n": args.n,
                 "priors": priors.to_dict()},
                os.path.join(args.out, "resolved_config.json"))
    return 0


# -- train --------------------------------------------------------------------

_ROLE_KIND = {"s1": "segmenter", "s2": "segmenter", "s3": "segmenter",
              "d": "denoiser", "r": "regressor"}
_ROLE_DEPS = {"s1": (), "s2": (), "s3": (), "d": ("s1",),
              "r": ("s1", "d", "s2")}


def _load_job(path):
    """CLI train config: {"train": TrainConfig fields,
    "network": {levels, base_features}}."""
    with open(path) as f:
        doc = json.load(f)
    config = TrainConfig.from_dict(doc.get("train", {}))
    network = doc.get("network", {})
    return config, network, doc


def _stage_paths(bundle_dir, stage):
    return (os.path.join(bundle_dir, f"{stage}_spec.json"),
            os.path.join(bundle_dir, stage))


def _load_stage_net(bundle_dir, stage, needed_by):
    spec_path, weights_prefix = _stage_paths(bundle_dir, stage)
    if not (os.path.exists(spec_path)
            and os.path.exists(weights_prefix + ".json")):
        raise DependencyError(
            f"training {needed_by} requires trained weights for {stage} "
            f"in {bundle_dir}; train that role first")
    net = Network(NetworkSpec.load(spec_path))
    net.set_params(load_weights(weights_prefix,
                                expected_names=list(net.state())))
    return net


def _maybe_write_manifest(bundle_dir):
    stages = {}
    for stage in STAGES:
        spec_path, weights_prefix = _stage_paths(bundle_dir, stage)
        if not (os.path.exists(spec_path)
                and os.path.exists(weights_prefix + ".json")):
            return
        stages[stage] = {"spec": os.path.basename(spec_path),
                         "weights": stage}
    _write_json({"format": BUNDLE_FORMAT, "schema": "schema.json",
                 "stages": stages},
                os.path.join(bundle_dir, BUNDLE_MANIFEST))


def _make_corpus(labelmaps, config, schema):
    """Stand-in corpus of (image, labels) pairs for denoiser/regressor
    training: one clean synthetic image per label map."""
    corpus = []
    for i, lab in enumerate(labelmaps):
        rng = RngStream(config.seed, stream=i).child(_STREAM_CORPUS + 1)
        image, dlab, _ = generate_pair([lab], config.priors, rng)
        corpus.append((image, dlab))
    return corpus


def cmd_train(args):
    config, network_doc, raw_doc = _load_job(args.config)
    if args.seed is not None:
        config = TrainConfig.from_dict(
            {**config.to_dict(), "seed": args.seed})
    role = args.role
    schema = default_schema()
    os.makedirs(args.out, exist_ok=True)

    cin, cout = stage_channels(role, schema)
    spec = NetworkSpec(role=_ROLE_KIND[role], in_channels=cin,
                       out_channels=cout,
                       levels=network_doc.get("levels", 5),
                       base_features=network_doc.get("base_features", 24))
    net = Network(spec, seed=config.seed)
    labelmaps = _load_labelmaps(args.maps)
    log_path = os.path.join(args.out, f"{role}_train_log.jsonl")

    if role in ("s1", "s2", "s3"):
        history, _ = train_segmenter(net, role, labelmaps, schema, config,
                                     out_dir=args.out, log_path=log_path)
    elif role == "d":
        s1 = _load_stage_net(args.out, "s1", needed_by="d")
        corpus = _make_corpus(labelmaps, config, schema)
        history, _ = train_denoiser(net, s1, corpus, schema, config,
                                    out_dir=args.out, log_path=log_path)
    else:
        frozen = {s: _load_stage_net(args.out, s, needed_by="r")
                  for s in ("s1", "d", "s2")}
        corpus = _make_corpus(labelmaps, config, schema)
        history, _ = train_regressor(net, frozen, corpus, schema, config,
                                     out_dir=args.out, log_path=log_path)

    spec_path, weights_prefix = _stage_paths(args.out, role)
    spec.save(spec_path)
    save_weights(net.state(), weights_prefix)
    schema_path = os.path.join(args.out, "schema.json")
    if not os.path.exists(schema_path):
        _write_json(schema.to_dict(), schema_path)
    _maybe_write_manifest(args.out)
    _write_json({"command": "train", "role": role, "seed": config.seed,
                 "config": config.to_dict(),
                 "network": spec.to_dict(),
                 "final_loss": history[-1] if history else None},
                os.path.join(args.out, f"{role}_resolved_config.json"))
    return 0


# -- segment ------------------------------------------------------------------

def cmd_segment(args):
    bundle = ModelBundle.load(args.bundle)
    scan = nifti_read(args.i, as_labels=False)
    os.makedirs(args.o, exist_ok=True)
    result = segment_full(scan, bundle, qc_threshold=args.robust_threshold)
    nifti_write(result.final_labels,
                os.path.join(args.o, "segmentation.nii.gz"))
    _write_json(result.qc.to_dict(), os.path.join(args.o, "qc_report.json"))
    report = volume_report(result, bundle.schema)
    _write_json(report.to_dict(bundle.schema),
                os.path.join(args.o, "volumes.json"))
    if args.save_soft:
        from .volume import IntensityVolume
        grid = result.final_labels.grid
        for name, soft in (("coarse", result.coarse_soft),
                           ("denoised", result.denoised_soft),
                           ("fine", result.fine_soft),
                           ("parcel", result.parcel_soft)):
            for c in range(soft.shape[0]):
                vol = IntensityVolume(grid, soft[c])
                nifti_write(vol, os.path.join(
                    args.o, f"soft_{name}_{c:03d}.nii.gz"))
    return 0


# -- cohort -------------------------------------------------------------------

_BASE_COLUMNS = ("subject", "age", "gender", "spacing_sag", "spacing_cor",
                 "spacing_ax")


def _read_cohort_table(path):
    """CSV with the documented header; extra columns are structure volumes,
    icv, optional group, and optional qc_<region> scores."""
    try:
        with open(path, newline="") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames is None:
                raise CohortTableError(f"{path}: empty table")
            missing = [c for c in _BASE_COLUMNS
                       if c not in reader.fieldnames]
            if missing:
                raise CohortTableError(
                    f"{path}: missing columns {missing}")
            rows = []
            for lineno, row in enumerate(reader, start=2):
                parsed = {"subject": row["subject"]}
                for col, val in row.items():
                    if col in ("subject", "group"):
                        continue
                    try:
                        parsed[col] = float(val)
                    except (TypeError, ValueError):
                        raise CohortTableError(
                            f"{path}:{lineno}: column {col!r}: "
                            f"bad value {val!r}")
                if "group" in row:
                    parsed["group"] = row["group"]
                rows.append(parsed)
    except OSError as e:
        raise CohortTableError(f"{path}: {e}")
    if not rows:
        raise CohortTableError(f"{path}: no data rows")
    volume_cols = [c for c in reader.fieldnames
                   if c not in _BASE_COLUMNS
                   and c != "group" and not c.startswith("qc_")]
    qc_cols = [c for c in reader.fieldnames if c.startswith("qc_")]
    return rows, volume_cols, qc_cols


def _cohort_ageing(rows, volume_cols):
    ages = np.array([r["age"] for r in rows])
    genders = np.array([r["gender"] for r in rows])
    spacings = np.array([[r["spacing_sag"], r["spacing_cor"],
                          r["spacing_ax"]] for r in rows])
    out = {}
    grid = np.linspace(ages.min(), ages.max(), 50)
    for col in volume_cols:
        vols = np.array([r[col] for r in rows])
        model = ageing_fit(ages, genders, spacings, vols)
        mean_sp = spacings.mean(axis=0)
        traj = [ageing_predict(model, a, 0.0, mean_sp) for a in grid]
        out[col] = {"model": model.to_dict(),
                    "age_grid": [float(a) for a in grid],
                    "trajectory": [float(v) for v in traj]}
    return out


def _cohort_effectsize(rows, volume_cols):
    if any("group" not in r for r in rows):
        raise CohortTableError("effectsize mode needs a 'group' column")
    groups = sorted({r["group"] for r in rows})
    if len(groups) != 2:
        raise CohortTableError(
            f"effectsize mode needs exactly 2 groups, found {groups}")
    icv_col = "icv" if "icv" in volume_cols else None
    out = {"groups": groups, "effect_sizes": {}}
    for col in volume_cols:
        if col == icv_col:
            continue
        vols = np.array([r[col] for r in rows])
        if icv_col:
            cov = np.array([[r["age"], r["gender"], r[icv_col]]
                            for r in rows])
            vols, _ = covariate_correct(vols, cov)
        else:
            cov = np.array([[r["age"], r["gender"]] for r in rows])
            vols, _ = covariate_correct(vols, cov)
        a = vols[[r["group"] == groups[0] for r in rows]]
        b = vols[[r["group"] == groups[1] for r in rows]]
        out["effect_sizes"][col] = cohens_d(a, b)
    return out


def _cohort_qcfilter(rows, volume_cols, qc_cols, threshold):
    if not qc_cols:
        raise CohortTableError(
            "qcfilter mode needs qc_<region> score columns")
    schema = default_schema()
    name_by_id = {s.id: s.name for s in schema.structures}
    id_by_name = {v: k for k, v in name_by_id.items()}
    records = []
    for r in rows:
        volumes = {}
        for col in volume_cols:
            if col == "icv":
                continue
            sid = id_by_name.get(col)
            volumes[sid if sid is not None else col] = r[col]
        scores = {c[len("qc_"):].replace("_", " "): r[c] for c in qc_cols}
        records.append((volumes, scores))
    kept, log = qc_filter(records, schema, mode="per_structure",
                          threshold=threshold)
    out_rows = []
    for r, (volumes, _) in zip(rows, kept):
        row = {"subject": r["subject"]}
        for key, v in volumes.items():
            name = name_by_id.get(key, key)
            row[name] = v
        out_rows.append(row)
    return {"threshold": threshold, "rows": out_rows,
            "dropped": [{"row": i, "region": region, "score": s}
                        for i, region, s in log]}


def cmd_cohort(args):
    rows, volume_cols, qc_cols = _read_cohort_table(args.volumes)
    if args.mode == "ageing":
        doc = _cohort_ageing(rows, volume_cols)
    elif args.mode == "effectsize":
        doc = _cohort_effectsize(rows, volume_cols)
    else:
        doc = _cohort_qcfilter(rows, volume_cols, qc_cols, args.threshold)
    _write_json(doc, args.out)
    return 0


# -- entry point ----------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="synthbrain",
        description="Synthetic-data brain MRI segmentation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate synthetic training pairs")
    p.add_argument("--maps", required=True,
                   help="directory of NIfTI label maps")
    p.add_argument("--priors", help="generation priors JSON (optional)")
    p.add_argument("--n", type=int, required=True, help="number of pairs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one network role")
    p.add_argument("--role", required=True,
                   choices=("s1", "d", "s2", "s3", "r"))
    p.add_argument("--config", required=True, help="training config JSON")
    p.add_argument("--maps", required=True,
                   help="directory of NIfTI label maps")
    p.add_argument("--seed", type=int, default=None,
                   help="override the config seed")
    p.add_argument("--out", required=True, help="bundle directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("segment", help="segment a scan with a bundle")
    p.add_argument("--i", required=True, help="input scan (NIfTI)")
    p.add_argument("--bundle", required=True, help="bundle directory")
    p.add_argument("--o", required=True, help="output directory")
    p.add_argument("--robust-threshold", type=float, default=QC_THRESHOLD)
    p.add_argument("--save-soft", action="store_true",
                   help="also write soft probability maps")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("cohort", help="population statistics over a table")
    p.add_argument("--volumes", required=True, help="cohort CSV table")
    p.add_argument("--mode", required=True,
                   choices=("ageing", "effectsize", "qcfilter"))
    p.add_argument("--threshold", type=float, default=QC_THRESHOLD)
    p.add_argument("--out", required=True, help="output report JSON")
    p.set_defaults(func=cmd_cohort)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SynthbrainError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())

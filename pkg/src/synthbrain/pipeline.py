"""Hierarchical inference pipeline.

A scan is resampled to 1 mm, normalized, and pushed through five networks:
a coarse segmenter (s1), a segmentation denoiser (d), a fine segmenter (s2),
a cortical parcellator (s3), and a quality regressor (r). Every intermediate
product lives on the same padded 1 mm grid; outputs are cropped back before
they are returned.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ValidationError
from .nn.network import Network, NetworkSpec, pad_to_factor
from .nn.weights_io import load_weights, save_weights
from .schema import LabelSchema, QC_REGIONS, schema_load
from .stats import VolumeReport, icv_estimate, soft_volume
from .volume import IntensityVolume, LabelVolume, normalize_minmax, resample

QC_THRESHOLD = 0.65
STAGES = ("s1", "d", "s2", "s3", "r")

BUNDLE_MANIFEST = "bundle.json"
BUNDLE_FORMAT = "synthbrain-bundle-v1"


@dataclass
class QCReport:
    """Predicted per-region quality scores and the pass/fail decision.

    A region passes when its score is at least the threshold: a score of
    exactly 0.65 passes, anything lower fails.
    """

    scores: dict            # region name -> score in [0, 1]
    threshold: float
    per_region_pass: dict   # region name -> bool
    overall_pass: bool

    @classmethod
    def from_scores(cls, scores, threshold=QC_THRESHOLD):
        passes = {name: bool(s >= threshold) for name, s in scores.items()}
        return cls(scores=dict(scores), threshold=float(threshold),
                   per_region_pass=passes,
                   overall_pass=all(passes.values()))

    def to_dict(self):
        return {"threshold": self.threshold,
                "scores": {k: float(v) for k, v in self.scores.items()},
                "per_region_pass": self.per_region_pass,
                "overall_pass": self.overall_pass}


@dataclass
class SegmentationResult:
    coarse_soft: np.ndarray      # [5, X, Y, Z]
    denoised_soft: np.ndarray    # [5, X, Y, Z]
    fine_soft: np.ndarray        # [n_structures, X, Y, Z]
    parcel_soft: np.ndarray      # [n_parcels + 1, X, Y, Z]
    final_labels: LabelVolume    # 1 mm grid
    qc: QCReport


def stage_channels(stage, schema):
    """(in_channels, out_channels) contract for each pipeline stage."""
    n_fine = len(schema.fine_ids)
    n_parcel = len(schema.parcel_ids) + 1  # + non-cortex channel
    table = {"s1": (1, 5),
             "d": (5, 5),
             "s2": (6, n_fine),
             "s3": (2, n_parcel),
             "r": (len(QC_REGIONS) + 1, len(QC_REGIONS))}
    return table[stage]


class ModelBundle:
    """The five trained networks plus the label schema, loaded together.

    Immutable at inference time; one bundle may serve many scans.
    """

    def __init__(self, nets, schema: LabelSchema):
        missing = [s for s in STAGES if s not in nets]
        if missing:
            raise ValidationError(f"bundle missing stages {missing}")
        for stage in STAGES:
            cin, cout = stage_channels(stage, schema)
            spec = nets[stage].spec
            if (spec.in_channels, spec.out_channels) != (cin, cout):
                raise ValidationError(
                    f"stage {stage}: expected {cin}->{cout} channels, "
                    f"spec has {spec.in_channels}->{spec.out_channels}")
        self.nets = dict(nets)
        self.schema = schema

    @property
    def pool_factor(self):
        return max(net.spec.pool_factor for net in self.nets.values())

    def save(self, bundle_dir):
        os.makedirs(bundle_dir, exist_ok=True)
        manifest = {"format": BUNDLE_FORMAT, "schema": "schema.json",
                    "stages": {}}
        for stage, net in self.nets.items():
            spec_name = f"{stage}_spec.json"
            net.spec.save(os.path.join(bundle_dir, spec_name))
            save_weights(net.state(), os.path.join(bundle_dir, stage))
            manifest["stages"][stage] = {"spec": spec_name, "weights": stage}
        with open(os.path.join(bundle_dir, "schema.json"), "w") as f:
            json.dump(self.schema.to_dict(), f, indent=1)
        with open(os.path.join(bundle_dir, BUNDLE_MANIFEST), "w") as f:
            json.dump(manifest, f, indent=1)

    @classmethod
    def load(cls, bundle_dir):
        path = os.path.join(bundle_dir, BUNDLE_MANIFEST)
        if not os.path.exists(path):
            raise ValidationError(f"no bundle manifest at {path}")
        with open(path) as f:
            manifest = json.load(f)
        if manifest.get("format") != BUNDLE_FORMAT:
            raise ValidationError(
                f"unsupported bundle format {manifest.get('format')!r}")
        schema = schema_load(os.path.join(bundle_dir, manifest["schema"]))
        nets = {}
        for stage, entry in manifest["stages"].items():
            spec = NetworkSpec.load(os.path.join(bundle_dir, entry["spec"]))
            net = Network(spec)
            state = load_weights(os.path.join(bundle_dir, entry["weights"]),
                                 expected_names=list(net.state()))
            net.set_params(state)
            nets[stage] = net
        return cls(nets, schema)


@dataclass
class Preprocessed:
    image: IntensityVolume   # 1 mm grid, values in [0, 1]
    padded: np.ndarray       # [X, Y, Z] float32, pooling-compatible dims
    crop: tuple              # slices recovering the unpadded grid


def preprocess(scan: IntensityVolume, pool_factor: int) -> Preprocessed:
    """Resample to 1 mm, min-max normalize, pad for pooling."""
    if scan.data.size == 0:
        raise ValidationError("empty scan")
    if not np.isfinite(scan.data).all():
        raise ValidationError("scan contains non-finite values")
    iso = resample(scan, (1.0, 1.0, 1.0))
    norm = normalize_minmax(iso)
    padded, crop = pad_to_factor(norm.data, pool_factor)
    return Preprocessed(image=norm, padded=padded, crop=crop)


def run_stage(bundle: ModelBundle, stage: str, x: np.ndarray) -> np.ndarray:
    """Run one network on an assembled input tensor [C, X, Y, Z].

    The s3 output is constrained to the cortex mask found in its second
    input channel (parcel probability forced to zero elsewhere, non-cortex
    channel forced to one). The r output is clamped to [0, 1].
    """
    if stage not in STAGES:
        raise ValidationError(f"unknown stage {stage!r}")
    cin, _ = stage_channels(stage, bundle.schema)
    if x.ndim != 4 or x.shape[0] != cin:
        raise ShapeError(
            f"stage {stage} expects [{cin}, X, Y, Z], got shape {x.shape}")
    y = bundle.nets[stage].forward(x.astype(np.float32, copy=False),
                                   mode="infer")
    if stage == "s3":
        mask = x[1] > 0.5
        y = y * mask  # broadcasts over channels
        y[0] = np.where(mask, y[0], 1.0)
    elif stage == "r":
        y = np.clip(y, 0.0, 1.0)
    return y


def _qc_onehot(fine_argmax_ids, schema):
    """Group a fine label array into QC-region one-hot channels.

    Channel 0 collects background and structures outside every QC region;
    channels 1..10 follow the QC_REGIONS order.
    """
    region_index = {name: i + 1 for i, name in enumerate(QC_REGIONS)}
    lut = np.zeros(max(schema.fine_ids) + 1, dtype=np.int64)
    for s in schema.structures:
        if s.qc_region is not None:
            lut[s.id] = region_index[s.qc_region]
    grouped = lut[fine_argmax_ids]
    oh = np.zeros((len(QC_REGIONS) + 1,) + grouped.shape, dtype=np.float32)
    for ch in range(len(QC_REGIONS) + 1):
        oh[ch] = grouped == ch
    return oh


def _degenerate_result(pp: Preprocessed, schema) -> SegmentationResult:
    dims = pp.image.grid.dims
    def bg_soft(n):
        soft = np.zeros((n,) + dims, dtype=np.float32)
        soft[0] = 1.0
        return soft
    labels = LabelVolume(pp.image.grid, np.zeros(dims, dtype=np.uint32))
    qc = QCReport.from_scores({name: 0.0 for name in QC_REGIONS})
    return SegmentationResult(
        coarse_soft=bg_soft(5), denoised_soft=bg_soft(5),
        fine_soft=bg_soft(len(schema.fine_ids)),
        parcel_soft=bg_soft(len(schema.parcel_ids) + 1),
        final_labels=labels, qc=qc)


def segment_full(scan, bundle: ModelBundle, qc_threshold=QC_THRESHOLD):
    """Full s1 -> d -> s2 -> s3 -> r pass over one scan.

    Accepts a single IntensityVolume or a sequence of them (one per image
    channel); a sequence yields one independent SegmentationResult each.
    """
    if isinstance(scan, (list, tuple)):
        return [segment_full(s, bundle, qc_threshold) for s in scan]
    schema = bundle.schema
    pp = preprocess(scan, bundle.pool_factor)
    if float(pp.padded.max()) == float(pp.padded.min()):
        # constant image: nothing to segment, report failure instead of
        # feeding a degenerate tensor through the networks
        return _degenerate_result(pp, schema)

    img = pp.padded[np.newaxis]
    coarse = run_stage(bundle, "s1", img)
    denoised = run_stage(bundle, "d", coarse)
    fine = run_stage(bundle, "s2", np.concatenate([img, denoised], axis=0))

    fine_ids = np.asarray(schema.fine_ids, dtype=np.uint32)
    fine_arg = fine_ids[np.argmax(fine, axis=0)]
    cortex = np.isin(fine_arg, list(schema.cortex_ids()))
    parcel = run_stage(
        bundle, "s3",
        np.concatenate([img, cortex[np.newaxis].astype(np.float32)], axis=0))
    scores_vec = run_stage(bundle, "r", _qc_onehot(fine_arg, schema))

    crop = pp.crop
    grid = pp.image.grid
    final = fine_arg[crop].astype(np.uint32)
    parcel_ids = np.asarray((0,) + schema.parcel_ids, dtype=np.uint32)
    parcel_arg = parcel_ids[np.argmax(parcel, axis=0)][crop]
    in_cortex = cortex[crop] & (parcel_arg > 0)
    final = np.where(in_cortex, parcel_arg, final)

    cidx = (slice(None),) + crop
    qc = QCReport.from_scores(
        {name: float(scores_vec[i]) for i, name in enumerate(QC_REGIONS)},
        qc_threshold)
    return SegmentationResult(
        coarse_soft=coarse[cidx], denoised_soft=denoised[cidx],
        fine_soft=fine[cidx], parcel_soft=parcel[cidx],
        final_labels=LabelVolume(grid, final), qc=qc)


def volume_report(result: SegmentationResult, schema) -> VolumeReport:
    """Soft per-structure volumes and the exact ICV sum for one result."""
    vv = result.final_labels.grid.voxel_volume_mm3
    volumes = {}
    for i, sid in enumerate(schema.fine_ids):
        volumes[sid] = soft_volume(result.fine_soft[i], vv)
    qc_by_structure = {}
    for s in schema.structures:
        if s.qc_region is not None:
            qc_by_structure[s.id] = result.qc.scores[s.qc_region]
    report = VolumeReport(volumes=volumes, icv=0.0, qc_scores=qc_by_structure)
    report.icv = icv_estimate(report, schema)
    return report


def qc_filter(records, schema, mode="whole", threshold=QC_THRESHOLD):
    """Filter volume records by QC score.

    Each record is (volumes: {structure id: mm^3}, scores: {region: score}).
    Mode "whole" drops a record entirely if any region scores below the
    threshold; "per_structure" blanks (sets to None) only the volumes of
    structures belonging to failing regions. Returns (kept records,
    drop log), where the log lists (record index, region, score) entries.
    """
    if mode not in ("whole", "per_structure"):
        raise ValidationError(f"unknown qc_filter mode {mode!r}")
    kept = []
    log = []
    for idx, (volumes, scores) in enumerate(records):
        # regions absent from the record are not judged
        failing = [r for r in QC_REGIONS
                   if r in scores and scores[r] < threshold]
        for region in failing:
            log.append((idx, region, float(scores[region])))
        if mode == "whole":
            if not failing:
                kept.append((dict(volumes), dict(scores)))
            continue
        blanked = dict(volumes)
        for region in failing:
            for sid in schema.qc_region_ids(region):
                if sid in blanked:
                    blanked[sid] = None
        kept.append((blanked, dict(scores)))
    return kept, log

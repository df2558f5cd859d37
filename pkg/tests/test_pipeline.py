"""Pipeline structure: stage contracts, bundle I/O, QC decisions, and
filtering. Uses small untrained networks; accuracy is covered elsewhere."""

import numpy as np
import pytest

from synthbrain.errors import ShapeError, ValidationError
from synthbrain.nn.network import NetworkSpec, build_network
from synthbrain.pipeline import (QC_THRESHOLD, STAGES, ModelBundle, QCReport,
                                 preprocess, qc_filter, run_stage,
                                 segment_full, stage_channels, volume_report)
from synthbrain.schema import QC_REGIONS
from synthbrain.stats import icv_estimate
from synthbrain.volume import IntensityVolume, isotropic_grid


def tiny_bundle(schema):
    nets = {}
    for stage in STAGES:
        cin, cout = stage_channels(stage, schema)
        role = {"d": "denoiser", "r": "regressor"}.get(stage, "segmenter")
        nets[stage] = build_network(
            NetworkSpec(role, cin, cout, levels=2, base_features=2), seed=7)
    return ModelBundle(nets, schema)


@pytest.fixture(scope="module")
def bundle(schema):
    return tiny_bundle(schema)


def random_scan(seed=0, dims=(10, 9, 8), spacing=(1.0, 1.0, 1.0)):
    from synthbrain.volume import Grid3
    rng = np.random.default_rng(seed)
    grid = Grid3(dims, spacing)
    return IntensityVolume(grid, rng.random(dims))


# -- QC decisions -------------------------------------------------------------

def test_qc_threshold_boundary():
    scores = {name: 0.9 for name in QC_REGIONS}
    scores["hippocampus"] = 0.65
    report = QCReport.from_scores(scores)
    assert report.per_region_pass["hippocampus"] is True
    assert report.overall_pass

    scores["hippocampus"] = 0.64
    report = QCReport.from_scores(scores)
    assert report.per_region_pass["hippocampus"] is False
    assert not report.overall_pass

    scores["hippocampus"] = 0.66
    assert QCReport.from_scores(scores).overall_pass


def test_qc_pass_monotone_in_score():
    names = list(QC_REGIONS)
    prev = None
    for s in np.linspace(0, 1, 101):
        report = QCReport.from_scores({n: float(s) for n in names})
        if prev is not None:
            assert report.overall_pass >= prev  # never pass -> fail as s rises
        prev = report.overall_pass
    assert QCReport.from_scores({n: 1.0 for n in names}).overall_pass


# -- bundle -------------------------------------------------------------------

def test_bundle_validates_stage_channels(schema):
    nets = {s: tiny_bundle(schema).nets[s] for s in STAGES}
    nets["s1"] = build_network(
        NetworkSpec("segmenter", 1, 4, levels=2, base_features=2))
    with pytest.raises(ValidationError, match="stage s1"):
        ModelBundle(nets, schema)
    with pytest.raises(ValidationError, match="missing stages"):
        ModelBundle({k: v for k, v in nets.items() if k != "r"}, schema)


def test_bundle_save_load_bitwise(bundle, tmp_path):
    bundle.save(tmp_path / "b")
    loaded = ModelBundle.load(tmp_path / "b")
    for stage in STAGES:
        for k, v in bundle.nets[stage].state().items():
            assert np.array_equal(loaded.nets[stage].state()[k], v)
    with pytest.raises(ValidationError, match="manifest"):
        ModelBundle.load(tmp_path / "nope")


# -- stage plumbing -----------------------------------------------------------

def test_run_stage_rejects_wrong_channels(bundle):
    with pytest.raises(ShapeError, match="stage s2 expects"):
        run_stage(bundle, "s2", np.zeros((5, 8, 8, 8), dtype=np.float32))
    with pytest.raises(ValidationError, match="unknown stage"):
        run_stage(bundle, "s9", np.zeros((1, 8, 8, 8), dtype=np.float32))


def test_s3_output_confined_to_cortex_mask(bundle, schema):
    rng = np.random.default_rng(0)
    img = rng.random((1, 8, 8, 8)).astype(np.float32)
    mask = np.zeros((1, 8, 8, 8), dtype=np.float32)
    mask[0, 2:5] = 1.0
    y = run_stage(bundle, "s3", np.concatenate([img, mask]))
    outside = mask[0] < 0.5
    assert np.all(y[1:, outside] == 0.0)
    assert np.all(y[0, outside] == 1.0)


def test_r_output_clamped(bundle, schema):
    x = np.random.default_rng(1).random(
        (len(QC_REGIONS) + 1, 8, 8, 8)).astype(np.float32) * 10
    y = run_stage(bundle, "r", x)
    assert y.shape == (len(QC_REGIONS),)
    assert np.all((y >= 0.0) & (y <= 1.0))


# -- preprocessing and full runs ------------------------------------------------

def test_preprocess_resamples_and_pads():
    scan = random_scan(dims=(10, 9, 8), spacing=(2.0, 1.0, 1.0))
    pp = preprocess(scan, 4)
    assert pp.image.grid.spacing == (1.0, 1.0, 1.0)
    assert pp.image.grid.dims[0] == 20  # 10 voxels at 2 mm span -> 20 at 1 mm
    assert all(d % 4 == 0 for d in pp.padded.shape)
    assert pp.image.data.min() == 0.0 and pp.image.data.max() == 1.0
    with pytest.raises(ValidationError, match="non-finite"):
        bad = random_scan()
        bad.data.setflags(write=True)
        bad.data[0, 0, 0] = np.nan
        preprocess(bad, 2)


def test_segment_full_shapes_and_label_closure(bundle, schema):
    scan = random_scan(dims=(9, 8, 7))
    res = segment_full(scan, bundle)
    dims = res.final_labels.grid.dims
    assert dims == (9, 8, 7)
    assert res.coarse_soft.shape == (5,) + dims
    assert res.fine_soft.shape == (len(schema.fine_ids),) + dims
    assert res.parcel_soft.shape == (len(schema.parcel_ids) + 1,) + dims
    valid = set(schema.fine_ids) | set(schema.parcel_ids)
    assert set(np.unique(res.final_labels.labels)) <= valid
    assert set(res.qc.scores) == set(QC_REGIONS)


def test_segment_full_multichannel_independent(bundle):
    a, b = random_scan(1), random_scan(2)
    results = segment_full([a, b], bundle)
    assert len(results) == 2
    solo = segment_full(a, bundle)
    assert np.array_equal(results[0].final_labels.labels,
                          solo.final_labels.labels)
    assert np.array_equal(results[0].fine_soft, solo.fine_soft)


def test_constant_image_degenerates_to_failing_background(bundle, schema):
    grid = isotropic_grid((8, 8, 8))
    res = segment_full(IntensityVolume(grid, np.zeros(grid.dims)), bundle)
    assert not res.qc.overall_pass
    assert res.final_labels.labels.max() == 0
    assert np.all(res.fine_soft[0] == 1.0)


def test_volume_report_icv_matches_independent_sum(bundle, schema):
    res = segment_full(random_scan(3), bundle)
    report = volume_report(res, schema)
    vv = res.final_labels.grid.voxel_volume_mm3
    expected = 0.0
    for sid in schema.icv_ids():
        i = schema.fine_ids.index(sid)
        expected += float(res.fine_soft[i].sum(dtype=np.float64) * vv)
    assert report.icv == expected
    assert report.icv == icv_estimate(report, schema)


# -- filtering ------------------------------------------------------------------

def records_for(schema):
    vols = {sid: 100.0 for sid in schema.fine_ids if sid != 0}
    good = {r: 0.9 for r in QC_REGIONS}
    bad = dict(good)
    bad["hippocampus"] = 0.5
    return [(dict(vols), good), (dict(vols), bad)]


def test_qc_filter_whole_drops_failing_record(schema):
    kept, log = qc_filter(records_for(schema), schema, mode="whole")
    assert len(kept) == 1
    assert log == [(1, "hippocampus", 0.5)]


def test_qc_filter_per_structure_blanks_failing_region(schema):
    kept, log = qc_filter(records_for(schema), schema, mode="per_structure")
    assert len(kept) == 2
    hip_ids = schema.qc_region_ids("hippocampus")
    for sid in hip_ids:
        assert kept[1][0][sid] is None
    untouched = [sid for sid in kept[1][0] if sid not in hip_ids]
    assert all(kept[1][0][sid] == 100.0 for sid in untouched)
    assert log == [(1, "hippocampus", 0.5)]


def test_qc_filter_threshold_and_missing_regions(schema):
    vols = {8: 1.0}
    rec = [(vols, {"hippocampus": 0.65})]
    kept, log = qc_filter(rec, schema, mode="whole")
    assert len(kept) == 1 and not log  # 0.65 passes
    kept, log = qc_filter(rec, schema, mode="whole", threshold=0.7)
    assert not kept and log[0][1] == "hippocampus"
    with pytest.raises(ValidationError):
        qc_filter(rec, schema, mode="bogus")

"""Label schema, coarse grouping, one-hot encoding."""

import numpy as np
import pytest

from synthbrain.errors import ValidationError
from synthbrain.schema import (COARSE_CLASSES, QC_REGIONS, LabelSchema,
                               Parcel, Structure, argmax_labels,
                               default_schema, one_hot, to_coarse)
from synthbrain.volume import LabelVolume, isotropic_grid


def test_default_schema_shape():
    s = default_schema()
    assert len(s.structures) == 32          # background + 31 structures
    assert len(s.parcels) == 68
    assert len(COARSE_CLASSES) == 5
    assert len(QC_REGIONS) == 10
    # every QC region is represented
    regions = {st.qc_region for st in s.structures if st.qc_region}
    assert regions == set(QC_REGIONS)


def test_icv_excludes_background_only():
    s = default_schema()
    ids = s.icv_ids()
    assert 0 not in ids
    assert len(ids) == 31


def test_cortex_ids():
    s = default_schema()
    assert set(s.cortex_ids()) == {3, 42}


def test_duplicate_structure_ids_rejected():
    structures = [Structure(0, "background", "background"),
                  Structure(1, "a", "cerebral grey matter"),
                  Structure(1, "b", "cerebral grey matter")]
    with pytest.raises(ValidationError):
        LabelSchema(structures, [], require_qc_regions=False)


def test_unknown_coarse_class_rejected():
    structures = [Structure(0, "background", "background"),
                  Structure(1, "a", "bone")]
    with pytest.raises(ValidationError):
        LabelSchema(structures, [], require_qc_regions=False)


def test_missing_qc_regions_rejected():
    structures = [Structure(0, "background", "background"),
                  Structure(1, "a", "cerebral grey matter", qc_region="cortex")]
    with pytest.raises(ValidationError):
        LabelSchema(structures, [])
    # but tolerated when explicitly allowed
    LabelSchema(structures, [], require_qc_regions=False)


def test_to_coarse_lut():
    s = default_schema()
    g = isotropic_grid((2, 2, 2))
    lab = LabelVolume(g, np.array([0, 2, 3, 4, 8, 16, 17, 41],
                                  dtype=np.uint32).reshape(2, 2, 2))
    coarse = to_coarse(lab, s)
    # background, white matter, grey matter, csf, cerebellum, wm(brainstem),
    # grey(hippocampus), white matter
    assert coarse.labels.ravel().tolist() == [0, 1, 2, 3, 4, 1, 2, 1]


def test_to_coarse_unknown_id_rejected():
    s = default_schema()
    g = isotropic_grid((1, 1, 1))
    lab = LabelVolume(g, np.array([[[999]]], dtype=np.uint32))
    with pytest.raises(ValidationError):
        to_coarse(lab, s)


def test_one_hot_partition_of_unity():
    s = default_schema()
    g = isotropic_grid((3, 3, 3))
    rng = np.random.default_rng(0)
    ids = np.asarray(s.fine_ids)
    lab = LabelVolume(g, ids[rng.integers(0, len(ids), (3, 3, 3))])
    oh = one_hot(lab, s.fine_ids)
    assert oh.shape == (len(s.fine_ids), 3, 3, 3)
    assert oh.dtype == np.float32
    assert np.all(oh.sum(axis=0) == 1.0)


def test_one_hot_argmax_inverse():
    s = default_schema()
    g = isotropic_grid((4, 4, 4))
    rng = np.random.default_rng(1)
    ids = np.asarray(s.fine_ids)
    lab = LabelVolume(g, ids[rng.integers(0, len(ids), (4, 4, 4))])
    oh = one_hot(lab, s.fine_ids)
    back = argmax_labels(oh, s.fine_ids, g)
    assert np.array_equal(back.labels, lab.labels)


def test_schema_roundtrip():
    s = default_schema()
    s2 = LabelSchema.from_dict(s.to_dict())
    assert s2.fine_ids == s.fine_ids
    assert s2.parcel_ids == s.parcel_ids


def test_parcel_ids_follow_atlas_numbering():
    s = default_schema()
    left = [p for p in s.parcel_ids if 1000 < p < 2000]
    right = [p for p in s.parcel_ids if p > 2000]
    assert len(left) == len(right) == 34
    assert 1004 not in s.parcel_ids and 2004 not in s.parcel_ids

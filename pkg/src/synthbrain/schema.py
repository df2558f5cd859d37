"""Label taxonomy: fine structures, coarse tissue classes, cortical parcels,
and QC regions, plus one-hot / coarse-projection utilities.

The shipped default schema uses FreeSurfer-compatible ids: 31 brain
structures (plus background 0) and 68 cortical parcels (Desikan-Killiany,
ids 1xxx/2xxx). QC regions merge left/right hemispheres.
"""

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import ValidationError
from .volume import LabelVolume

COARSE_CLASSES = (
    "background",
    "cerebral white matter",
    "cerebral grey matter",
    "cerebrospinal fluid",
    "cerebellum",
)

QC_REGIONS = (
    "white matter",
    "cortex",
    "lateral ventricle",
    "cerebellum",
    "thalamus",
    "hippocampus",
    "amygdala",
    "pallidum",
    "putamen",
    "brainstem",
)

_HEMIS = ("left", "right", "none")


@dataclass(frozen=True)
class Structure:
    id: int
    name: str
    coarse: str
    hemisphere: str = "none"
    is_cortex: bool = False
    qc_region: str = None
    counts_in_icv: bool = True


@dataclass(frozen=True)
class Parcel:
    id: int
    name: str


class LabelSchema:
    """Validated, immutable label taxonomy."""

    def __init__(self, structures, parcels, version=1,
                 require_qc_regions=True):
        self.version = version
        self.structures = tuple(structures)
        self.parcels = tuple(parcels)
        self._validate(require_qc_regions)
        self._by_id = {s.id: s for s in self.structures}
        self.fine_ids = tuple(sorted(self._by_id))
        self.parcel_ids = tuple(p.id for p in self.parcels)
        self._coarse_lut = None

    def _validate(self, require_qc_regions):
        ids = [s.id for s in self.structures]
        if len(ids) != len(set(ids)):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise ValidationError(f"duplicate structure ids {dup}")
        pids = [p.id for p in self.parcels]
        if len(pids) != len(set(pids)) or set(pids) & set(ids):
            raise ValidationError("parcel ids must be unique and disjoint "
                                  "from structure ids")
        if 0 not in ids:
            raise ValidationError("id 0 (background) is required")
        for s in self.structures:
            if s.coarse not in COARSE_CLASSES:
                raise ValidationError(
                    f"unknown coarse class {s.coarse!r} for id {s.id}")
            if s.hemisphere not in _HEMIS:
                raise ValidationError(
                    f"unknown hemisphere {s.hemisphere!r} for id {s.id}")
            if s.qc_region is not None and s.qc_region not in QC_REGIONS:
                raise ValidationError(
                    f"unknown qc region {s.qc_region!r} for id {s.id}")
            if s.id == 0 and s.coarse != "background":
                raise ValidationError("background must have coarse class "
                                      "'background'")
        if require_qc_regions:
            present = {s.qc_region for s in self.structures
                       if s.qc_region is not None}
            missing = set(QC_REGIONS) - present
            if missing:
                raise ValidationError(
                    f"missing QC regions: {sorted(missing)}")

    # -- lookups ----------------------------------------------------------

    def structure(self, sid):
        try:
            return self._by_id[sid]
        except KeyError:
            raise ValidationError(f"unknown label id {sid}") from None

    def coarse_index(self, sid):
        return COARSE_CLASSES.index(self.structure(sid).coarse)

    def coarse_lut(self):
        """Dense id -> coarse-class-index lookup (-1 for unknown ids)."""
        if self._coarse_lut is None:
            size = max(self.fine_ids) + 1
            lut = np.full(size, -1, dtype=np.int32)
            for s in self.structures:
                lut[s.id] = COARSE_CLASSES.index(s.coarse)
            self._coarse_lut = lut
        return self._coarse_lut

    def icv_ids(self):
        return tuple(s.id for s in self.structures
                     if s.counts_in_icv and s.id != 0)

    def qc_region_ids(self, region):
        """Structure ids belonging to a QC region (hemispheres merged)."""
        return tuple(s.id for s in self.structures if s.qc_region == region)

    def cortex_ids(self):
        return tuple(s.id for s in self.structures if s.is_cortex)

    # -- serialization -----------------------------------------------------

    @classmethod
    def from_dict(cls, doc, require_qc_regions=True):
        try:
            structures = [Structure(
                id=int(e["id"]), name=str(e["name"]), coarse=e["coarse"],
                hemisphere=e.get("hemisphere", "none"),
                is_cortex=bool(e.get("is_cortex", False)),
                qc_region=e.get("qc_region"),
                counts_in_icv=bool(e.get("counts_in_icv", True)),
            ) for e in doc["structures"]]
            parcels = [Parcel(id=int(e["id"]), name=str(e["name"]))
                       for e in doc.get("parcels", [])]
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed schema document: {exc}") from exc
        declared = doc.get("parcel_count")
        if declared is not None and declared != len(parcels):
            raise ValidationError(
                f"declared parcel_count {declared} != {len(parcels)} parcels")
        return cls(structures, parcels, version=doc.get("version", 1),
                   require_qc_regions=require_qc_regions)

    def to_dict(self):
        return {
            "version": self.version,
            "structures": [{
                "id": s.id, "name": s.name, "coarse": s.coarse,
                "hemisphere": s.hemisphere, "is_cortex": s.is_cortex,
                "qc_region": s.qc_region, "counts_in_icv": s.counts_in_icv,
            } for s in self.structures],
            "parcels": [{"id": p.id, "name": p.name} for p in self.parcels],
        }


def schema_load(path, require_qc_regions=True):
    with open(path) as f:
        doc = json.load(f)
    return LabelSchema.from_dict(doc, require_qc_regions=require_qc_regions)


def default_schema():
    """The shipped schema: 31 structures + background, 68 parcels."""
    text = resources.files("synthbrain.data").joinpath(
        "default_schema.json").read_text()
    return LabelSchema.from_dict(json.loads(text))


def to_coarse(labels: LabelVolume, schema: LabelSchema) -> LabelVolume:
    """Replace each fine id by its coarse-class index (0-4)."""
    lut = schema.coarse_lut()
    arr = labels.labels
    if arr.size and int(arr.max()) >= lut.size:
        bad = int(arr.max())
        raise ValidationError(f"label id {bad} not in schema")
    out = lut[arr]
    if np.any(out < 0):
        bad = sorted(int(v) for v in np.unique(arr[out < 0]))
        raise ValidationError(f"label ids {bad} not in schema")
    return LabelVolume(labels.grid, out.astype(np.uint32))


def one_hot(labels: LabelVolume, label_list) -> np.ndarray:
    """One-hot encode to a [K, X, Y, Z] float32 tensor.

    Channel k corresponds to label_list[k]; every voxel's label must be in
    label_list, so channels sum to exactly 1 everywhere.
    """
    label_list = list(label_list)
    arr = labels.labels
    index = {lab: k for k, lab in enumerate(label_list)}
    lut = np.full(int(arr.max()) + 1 if arr.size else 1, -1, dtype=np.int64)
    for lab, k in index.items():
        if lab < lut.size:
            lut[lab] = k
    chan = lut[arr]
    if np.any(chan < 0):
        bad = sorted(int(v) for v in np.unique(arr[chan < 0]))
        raise ValidationError(f"labels {bad} outside label list")
    out = np.zeros((len(label_list),) + arr.shape, dtype=np.float32)
    flat = out.reshape(len(label_list), -1)
    flat[chan.ravel(), np.arange(arr.size)] = 1.0
    return out


def argmax_labels(tensor, label_list, grid) -> LabelVolume:
    """Inverse of one_hot: channel argmax mapped back through label_list."""
    ids = np.asarray(list(label_list), dtype=np.uint32)
    return LabelVolume(grid, ids[np.argmax(tensor, axis=0)])

"""3D volume data model: grids with world affines, intensity and label volumes,
axis-aligned resampling, and min-max intensity normalization.

Volumes are immutable after construction (arrays are flagged read-only) and
all operations are pure functions, so they are safe to share across threads.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ValidationError


def _as_readonly(a):
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Grid3:
    """Voxel lattice: dims (voxels per axis), spacing (mm per voxel), and a
    4x4 affine mapping voxel indices to world mm coordinates."""

    dims: tuple
    spacing: tuple
    affine: np.ndarray = None

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        if len(dims) != 3 or len(spacing) != 3:
            raise ValidationError("Grid3 requires 3 dims and 3 spacings")
        if any(d < 1 for d in dims):
            raise ValidationError(f"non-positive dims {dims}")
        if any(s <= 0 for s in spacing):
            raise ValidationError(f"non-positive spacing {spacing}")
        affine = self.affine
        if affine is None:
            affine = np.diag([spacing[0], spacing[1], spacing[2], 1.0])
        affine = np.asarray(affine, dtype=np.float64)
        if affine.shape != (4, 4):
            raise ValidationError("affine must be 4x4")
        if abs(np.linalg.det(affine[:3, :3])) < 1e-12:
            raise ValidationError("affine is singular")
        norms = np.linalg.norm(affine[:3, :3], axis=0)
        if not np.allclose(norms, spacing, rtol=1e-6):
            raise ValidationError(
                f"affine column norms {norms} disagree with spacing {spacing}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "affine", _as_readonly(affine))

    @property
    def voxel_volume_mm3(self):
        return float(np.prod(self.spacing))

    def close_to(self, other, tol=1e-6):
        return (self.dims == other.dims
                and np.allclose(self.spacing, other.spacing, atol=tol)
                and np.allclose(self.affine, other.affine, atol=tol))


def isotropic_grid(dims, spacing=1.0):
    s = float(spacing)
    return Grid3(tuple(dims), (s, s, s))


@dataclass(frozen=True)
class IntensityVolume:
    """Scalar volume; data is float32, C-order, shape == grid.dims."""

    grid: Grid3
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32).reshape(self.grid.dims)
        object.__setattr__(self, "data", _as_readonly(data))


@dataclass(frozen=True)
class LabelVolume:
    """Integer label volume; labels are uint32, shape == grid.dims."""

    grid: Grid3
    labels: np.ndarray = field(repr=False)

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.dtype.kind not in "ui":
            raise ValidationError("labels must be integers")
        if labels.size and labels.min() < 0:
            raise ValidationError("labels must be non-negative")
        labels = labels.astype(np.uint32).reshape(self.grid.dims)
        object.__setattr__(self, "labels", _as_readonly(labels))

    def label_set(self):
        return set(int(v) for v in np.unique(self.labels))


def _target_grid(grid, target_spacing):
    target = tuple(float(s) for s in target_spacing)
    if any(s <= 0 for s in target):
        raise ValidationError(f"non-positive target spacing {target}")
    out_dims = tuple(
        int(np.ceil(d * s / t))
        for d, s, t in zip(grid.dims, grid.spacing, target))
    direction = grid.affine[:3, :3] / np.asarray(grid.spacing)
    affine = np.eye(4)
    affine[:3, :3] = direction * np.asarray(target)
    affine[:3, 3] = grid.affine[:3, 3]
    return Grid3(out_dims, target, affine)


def _source_coords(grid, out_grid):
    """Source voxel coordinates for each output voxel (axis-aligned case:
    pure per-axis index scaling, origin preserved)."""
    ratios = [t / s for s, t in zip(grid.spacing, out_grid.spacing)]
    ax = [np.arange(d, dtype=np.float64) * r
          for d, r in zip(out_grid.dims, ratios)]
    cx, cy, cz = np.meshgrid(*ax, indexing="ij")
    return cx.ravel(), cy.ravel(), cz.ravel()


def resample(volume, target_spacing, mode=None):
    """Resample to a new axis-aligned spacing.

    mode defaults to 'trilinear' for IntensityVolume and is required to be
    'nearest' for LabelVolume. Out-of-range samples clamp to the edge.
    """
    is_labels = isinstance(volume, LabelVolume)
    if mode is None:
        mode = "nearest" if is_labels else "trilinear"
    if is_labels and mode != "nearest":
        raise ValidationError("LabelVolume resampling requires mode='nearest'")
    out_grid = _target_grid(volume.grid, target_spacing)
    cx, cy, cz = _source_coords(volume.grid, out_grid)
    if is_labels:
        vals = kernels.sample_nearest(
            volume.labels.astype(np.float64), cx, cy, cz)
        return LabelVolume(out_grid, np.rint(vals).astype(np.uint32))
    src = np.ascontiguousarray(volume.data, dtype=np.float32)
    if mode == "trilinear":
        vals = kernels.sample_trilinear(src, cx, cy, cz)
    elif mode == "nearest":
        vals = kernels.sample_nearest(src, cx, cy, cz)
    else:
        raise ValidationError(f"unknown resampling mode {mode!r}")
    return IntensityVolume(out_grid, vals.reshape(out_grid.dims))


def normalize_minmax(volume):
    """Affinely map intensities to [0, 1]; constant volumes map to zeros."""
    data = volume.data
    if not np.isfinite(data).all():
        raise ValidationError("non-finite intensities")
    lo = float(data.min())
    hi = float(data.max())
    if hi == lo:
        return IntensityVolume(volume.grid, np.zeros_like(data))
    return IntensityVolume(volume.grid, (data - lo) / (hi - lo))

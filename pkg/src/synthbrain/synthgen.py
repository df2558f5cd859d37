"""Domain-randomized generative model.

Turns a 1 mm label map into a (synthetic image, ground-truth labels)
training pair by composing: random spatial deformation, Gaussian-mixture
contrast synthesis, multiplicative bias field, noise + rescale + gamma,
and acquisition simulation (anisotropic blur, subsampling, resampling back
to 1 mm). Also degrades real images (with the deformation returned so the
paired labels can be deformed identically) for downstream training.

Everything is a pure function of (inputs, priors, rng stream).
"""

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.ndimage import gaussian_filter1d

from . import kernels
from .errors import ValidationError
from .volume import Grid3, IntensityVolume, LabelVolume, normalize_minmax

DIRECTIONS = ("axial", "coronal", "sagittal", "isotropic")
# which axes receive the sampled (thick) spacing
_DIRECTION_AXES = {"sagittal": (0,), "coronal": (1,), "axial": (2,),
                   "isotropic": (0, 1, 2)}


def _check_range(name, rng_pair):
    lo, hi = float(rng_pair[0]), float(rng_pair[1])
    if lo > hi:
        raise ValidationError(f"{name}: range low {lo} > high {hi}")
    return (lo, hi)


@dataclass(frozen=True)
class GenPriors:
    """Uniform prior ranges for every randomization parameter."""

    rotation_deg: tuple = (-15.0, 15.0)
    scale: tuple = (0.85, 1.15)
    shear: tuple = (-0.012, 0.012)
    translation_mm: tuple = (-10.0, 10.0)
    elastic_std_mm: tuple = (0.0, 3.0)
    elastic_grid_mm: float = 16.0
    gmm_mean: tuple = (0.0, 1.0)
    gmm_std: tuple = (0.0, 0.25)
    bias_log_std: tuple = (0.0, 0.4)
    bias_grid_mm: float = 40.0
    noise_std: tuple = (0.0, 0.1)
    gamma_log: tuple = (-0.35, 0.35)
    spacing_mm: tuple = (1.0, 9.0)
    direction_probs: tuple = (0.25, 0.25, 0.25, 0.25)
    blur_factor: float = 0.85

    def __post_init__(self):
        for name in ("rotation_deg", "scale", "shear", "translation_mm",
                     "elastic_std_mm", "gmm_mean", "gmm_std", "bias_log_std",
                     "noise_std", "gamma_log", "spacing_mm"):
            object.__setattr__(self, name, _check_range(
                name, getattr(self, name)))
        if self.spacing_mm[0] < 1.0:
            raise ValidationError("spacing_mm low must be >= 1 mm "
                                  "(the output grid spacing)")
        probs = tuple(float(p) for p in self.direction_probs)
        if len(probs) != 4 or any(p < 0 for p in probs) or sum(probs) <= 0:
            raise ValidationError("direction_probs must be 4 non-negative "
                                  "weights")
        object.__setattr__(self, "direction_probs",
                           tuple(p / sum(probs) for p in probs))
        if self.elastic_grid_mm <= 0 or self.bias_grid_mm <= 0:
            raise ValidationError("control-grid spacings must be positive")

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


def identity_priors():
    """Degenerate priors: every draw is the identity transform."""
    return GenPriors(
        rotation_deg=(0, 0), scale=(1, 1), shear=(0, 0),
        translation_mm=(0, 0), elastic_std_mm=(0, 0),
        gmm_mean=(0.5, 0.5), gmm_std=(0, 0), bias_log_std=(0, 0),
        noise_std=(0, 0), gamma_log=(0, 0), spacing_mm=(1, 1),
        direction_probs=(0, 0, 0, 1))


def widen_priors(priors, factor=2.0):
    """Denoiser/regressor-training corruption: scale the upper bounds of
    noise, bias, |gamma|, and spacing by `factor` (>= 1)."""
    f = float(factor)
    if f < 1.0:
        raise ValidationError("widening factor must be >= 1")
    return GenPriors(
        rotation_deg=priors.rotation_deg, scale=priors.scale,
        shear=priors.shear, translation_mm=priors.translation_mm,
        elastic_std_mm=priors.elastic_std_mm,
        elastic_grid_mm=priors.elastic_grid_mm,
        gmm_mean=priors.gmm_mean, gmm_std=priors.gmm_std,
        bias_log_std=(priors.bias_log_std[0], priors.bias_log_std[1] * f),
        bias_grid_mm=priors.bias_grid_mm,
        noise_std=(priors.noise_std[0], priors.noise_std[1] * f),
        gamma_log=(priors.gamma_log[0] * f, priors.gamma_log[1] * f),
        spacing_mm=(priors.spacing_mm[0],
                    max(priors.spacing_mm[0], priors.spacing_mm[1] * f)),
        direction_probs=priors.direction_probs,
        blur_factor=priors.blur_factor)


@dataclass(frozen=True)
class GenParams:
    """One sampled realization of the generative model's parameters."""

    rotation_deg: np.ndarray
    scale: np.ndarray
    shear: np.ndarray
    translation_mm: np.ndarray
    elastic_std_mm: float
    elastic_grid_mm: float
    gmm_mean: dict
    gmm_std: dict
    bias_log_std: float
    bias_grid_mm: float
    noise_std: float
    gamma_log: float
    spacing_mm: np.ndarray
    direction: str
    blur_factor: float
    map_index: int = 0
    seed: int = field(default=None)
    stream: int = field(default=None)

    def to_dict(self):
        return {
            "rotation_deg": [float(v) for v in self.rotation_deg],
            "scale": [float(v) for v in self.scale],
            "shear": [float(v) for v in self.shear],
            "translation_mm": [float(v) for v in self.translation_mm],
            "elastic_std_mm": float(self.elastic_std_mm),
            "elastic_grid_mm": float(self.elastic_grid_mm),
            "gmm_mean": {str(k): float(v) for k, v in self.gmm_mean.items()},
            "gmm_std": {str(k): float(v) for k, v in self.gmm_std.items()},
            "bias_log_std": float(self.bias_log_std),
            "bias_grid_mm": float(self.bias_grid_mm),
            "noise_std": float(self.noise_std),
            "gamma_log": float(self.gamma_log),
            "spacing_mm": [float(v) for v in self.spacing_mm],
            "direction": self.direction,
            "blur_factor": float(self.blur_factor),
            "map_index": int(self.map_index),
            "seed": self.seed,
            "stream": self.stream,
        }


def sample_params(priors, rng, label_ids=(), n_maps=1):
    """Draw one GenParams from the priors. The draw order is fixed and is
    part of the determinism contract."""
    u = rng.uniform
    rotation = u(*priors.rotation_deg, 3)
    scale = u(*priors.scale, 3)
    shear = u(*priors.shear, 3)
    translation = u(*priors.translation_mm, 3)
    elastic_std = float(u(*priors.elastic_std_mm))
    bias_log_std = float(u(*priors.bias_log_std))
    noise_std = float(u(*priors.noise_std))
    gamma_log = float(u(*priors.gamma_log))
    thick = float(u(*priors.spacing_mm))
    direction = DIRECTIONS[int(rng.choice(4, p=priors.direction_probs))]
    spacing = np.ones(3)
    for ax in _DIRECTION_AXES[direction]:
        spacing[ax] = thick
    gmm_mean = {}
    gmm_std = {}
    for lab in sorted(int(i) for i in label_ids):
        gmm_mean[lab] = float(u(*priors.gmm_mean))
        gmm_std[lab] = float(u(*priors.gmm_std))
    map_index = int(rng.integers(n_maps)) if n_maps > 1 else 0
    return GenParams(
        rotation_deg=rotation, scale=scale, shear=shear,
        translation_mm=translation, elastic_std_mm=elastic_std,
        elastic_grid_mm=priors.elastic_grid_mm,
        gmm_mean=gmm_mean, gmm_std=gmm_std,
        bias_log_std=bias_log_std, bias_grid_mm=priors.bias_grid_mm,
        noise_std=noise_std, gamma_log=gamma_log, spacing_mm=spacing,
        direction=direction, blur_factor=priors.blur_factor,
        map_index=map_index,
        seed=getattr(rng, "seed", None), stream=getattr(rng, "stream", None))


# --------------------------------------------------------------------------
# spatial deformation

def _affine_matrix(params):
    rx, ry, rz = np.deg2rad(params.rotation_deg)
    cx_, sx = math.cos(rx), math.sin(rx)
    cy_, sy = math.cos(ry), math.sin(ry)
    cz_, sz = math.cos(rz), math.sin(rz)
    Rx = np.array([[1, 0, 0], [0, cx_, -sx], [0, sx, cx_]])
    Ry = np.array([[cy_, 0, sy], [0, 1, 0], [-sy, 0, cy_]])
    Rz = np.array([[cz_, -sz, 0], [sz, cz_, 0], [0, 0, 1]])
    sxy, sxz, syz = params.shear
    Sh = np.array([[1, sxy, sxz], [0, 1, syz], [0, 0, 1]])
    Sc = np.diag(params.scale)
    return Rz @ Ry @ Rx @ Sh @ Sc


def _control_field(dims, grid_spacing, std, rng):
    """Smooth per-axis displacement (voxels): N(0, std^2) on a coarse grid,
    trilinearly upsampled. Control point i sits exactly at voxel i*g."""
    g = float(grid_spacing)
    ctrl_dims = tuple(int(np.ceil((d - 1) / g)) + 1 for d in dims)
    ax = [np.arange(d, dtype=np.float64) / g for d in dims]
    cx, cy, cz = np.meshgrid(*ax, indexing="ij")
    cx, cy, cz = cx.ravel(), cy.ravel(), cz.ravel()
    fields = []
    for _ in range(3):
        ctrl = rng.normal(0.0, std, ctrl_dims)
        fields.append(kernels.sample_trilinear(
            np.ascontiguousarray(ctrl), cx, cy, cz))
    return fields


class Deformation:
    """A sampled spatial transform, applicable to images (trilinear) and
    label maps (nearest) so paired data deform identically."""

    def __init__(self, params, dims, rng):
        self.dims = tuple(dims)
        A = _affine_matrix(params)
        self._A_inv = np.linalg.inv(A)
        self._center = (np.asarray(self.dims, dtype=np.float64) - 1) / 2
        self._translation = np.asarray(params.translation_mm, dtype=np.float64)
        if params.elastic_std_mm > 0:
            self._disp = _control_field(
                self.dims, params.elastic_grid_mm, params.elastic_std_mm, rng)
        else:
            self._disp = None
        self._coords = None

    def source_coords(self):
        if self._coords is None:
            ax = [np.arange(d, dtype=np.float64) for d in self.dims]
            ox, oy, oz = np.meshgrid(*ax, indexing="ij")
            pts = np.stack([ox.ravel(), oy.ravel(), oz.ravel()])
            rel = pts - (self._center + self._translation)[:, None]
            src = self._A_inv @ rel + self._center[:, None]
            if self._disp is not None:
                src = src + np.stack(self._disp)
            self._coords = (np.ascontiguousarray(src[0]),
                            np.ascontiguousarray(src[1]),
                            np.ascontiguousarray(src[2]))
        return self._coords

    def apply_to_labels(self, labels: LabelVolume) -> LabelVolume:
        cx, cy, cz = self.source_coords()
        vals = kernels.sample_nearest(
            labels.labels.astype(np.float64), cx, cy, cz)
        return LabelVolume(labels.grid,
                           np.rint(vals).astype(np.uint32).reshape(self.dims))

    def apply_to_image(self, image: IntensityVolume) -> IntensityVolume:
        cx, cy, cz = self.source_coords()
        vals = kernels.sample_trilinear(
            np.ascontiguousarray(image.data), cx, cy, cz)
        return IntensityVolume(image.grid, vals.reshape(self.dims))


def spatial_augment(labels: LabelVolume, params, rng) -> LabelVolume:
    """Random affine + smooth elastic deformation, nearest-neighbour
    pull-back, output on the input grid."""
    return Deformation(params, labels.grid.dims, rng).apply_to_labels(labels)


# --------------------------------------------------------------------------
# intensity synthesis and corruption

def gmm_synthesize(labels: LabelVolume, params, rng) -> IntensityVolume:
    """Per-label Gaussian intensities: voxel with label k gets an
    independent N(mu_k, sigma_k^2) sample."""
    arr = labels.labels
    present = np.unique(arr)
    max_id = int(present.max()) if present.size else 0
    mu = np.zeros(max_id + 1, dtype=np.float64)
    sd = np.zeros(max_id + 1, dtype=np.float64)
    for lab in present:
        lab = int(lab)
        if lab not in params.gmm_mean:
            raise ValidationError(f"no GMM parameters drawn for label {lab}")
        mu[lab] = params.gmm_mean[lab]
        sd[lab] = params.gmm_std[lab]
    z = rng.standard_normal(arr.shape)
    data = mu[arr] + sd[arr] * z
    return IntensityVolume(labels.grid, data)


def bias_field_apply(image: IntensityVolume, params, rng) -> IntensityVolume:
    """Multiply by exp(b), b a trilinearly upsampled coarse Gaussian field."""
    dims = image.grid.dims
    g = params.bias_grid_mm / image.grid.spacing[0]
    ctrl_dims = tuple(int(np.ceil((d - 1) / g)) + 1 for d in dims)
    ctrl = rng.normal(0.0, params.bias_log_std, ctrl_dims)
    ax = [np.arange(d, dtype=np.float64) / g for d in dims]
    cx, cy, cz = np.meshgrid(*ax, indexing="ij")
    b = kernels.sample_trilinear(np.ascontiguousarray(ctrl),
                                 cx.ravel(), cy.ravel(), cz.ravel())
    out = image.data * np.exp(b.reshape(dims))
    return IntensityVolume(image.grid, out)


def intensity_corrupt(image: IntensityVolume, params, rng) -> IntensityVolume:
    """Additive Gaussian noise, min-max rescale to [0,1], then voxel-wise
    exponentiation x**exp(gamma)."""
    data = image.data + rng.normal(0.0, params.noise_std, image.grid.dims)
    vol = normalize_minmax(IntensityVolume(image.grid, data))
    exponent = math.exp(params.gamma_log)
    if exponent != 1.0:
        vol = IntensityVolume(vol.grid, np.power(vol.data, exponent))
    return vol


def simulate_acquisition(image: IntensityVolume, params) -> IntensityVolume:
    """Anisotropic blur + subsampling at the simulated acquisition spacing,
    then trilinear resampling back onto the input grid (partial-volume
    simulation). No-op when the simulated spacing equals the grid spacing."""
    grid = image.grid
    ratios = [t / s for t, s in zip(params.spacing_mm, grid.spacing)]
    if all(abs(r - 1.0) < 1e-12 for r in ratios):
        return image
    data = np.asarray(image.data, dtype=np.float64)
    for axis, r in enumerate(ratios):
        if r > 1.0:
            sigma = params.blur_factor * r
            data = gaussian_filter1d(data, sigma, axis=axis, mode="nearest")
    # subsample onto the low-resolution lattice (origin-aligned)
    lr_dims = tuple(max(1, int(np.ceil(d / r)))
                    for d, r in zip(grid.dims, ratios))
    ax = [np.arange(n, dtype=np.float64) * r
          for n, r in zip(lr_dims, ratios)]
    cx, cy, cz = np.meshgrid(*ax, indexing="ij")
    lr = kernels.sample_trilinear(
        np.ascontiguousarray(data), cx.ravel(), cy.ravel(), cz.ravel()
    ).reshape(lr_dims)
    # resample back to the original grid
    ax = [np.arange(d, dtype=np.float64) / r
          for d, r in zip(grid.dims, ratios)]
    cx, cy, cz = np.meshgrid(*ax, indexing="ij")
    hi = kernels.sample_trilinear(
        np.ascontiguousarray(lr), cx.ravel(), cy.ravel(), cz.ravel())
    return IntensityVolume(grid, hi.reshape(grid.dims))


# --------------------------------------------------------------------------
# end-to-end generation

def generate_pair(labelmaps, priors, rng, label_ids=None):
    """Produce one (synthetic image, deformed ground-truth labels) pair.

    The returned labels are always the spatially deformed map; the image is
    synthesized from those same deformed labels.
    """
    if not labelmaps:
        raise ValidationError("no label maps supplied")
    if label_ids is None:
        label_ids = sorted(set().union(*(m.label_set() for m in labelmaps)))
    params = sample_params(priors, rng, label_ids=label_ids,
                           n_maps=len(labelmaps))
    labels = labelmaps[params.map_index]
    deformed = spatial_augment(labels, params, rng)
    image = gmm_synthesize(deformed, params, rng)
    image = bias_field_apply(image, params, rng)
    image = intensity_corrupt(image, params, rng)
    image = simulate_acquisition(image, params)
    return image, deformed, params


def degrade_real(image: IntensityVolume, wide_priors, rng):
    """Degrade a real (or stand-in) 1 mm image for denoiser/regressor
    training. Returns (degraded image, deformation) so the paired labels
    can be deformed identically."""
    params = sample_params(wide_priors, rng)
    deformation = Deformation(params, image.grid.dims, rng)
    out = deformation.apply_to_image(image)
    out = bias_field_apply(out, params, rng)
    out = normalize_minmax(out)
    exponent = math.exp(params.gamma_log)
    if exponent != 1.0:
        out = IntensityVolume(out.grid, np.power(out.data, exponent))
    out = simulate_acquisition(out, params)
    data = out.data + rng.normal(0.0, params.noise_std, out.grid.dims)
    out = normalize_minmax(IntensityVolume(out.grid, data))
    return out, deformation, params

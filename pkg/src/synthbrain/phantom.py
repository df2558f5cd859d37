"""Deterministic, brain-like geometric label phantoms.

These stand in for real anatomical label maps at desk scale: nested
ellipsoids laid out so every coarse tissue class and every QC region is
present, with per-map jitter for population variability. Ids follow the
shipped default schema (FreeSurfer conventions).
"""

import numpy as np

from .rng import RngStream
from .volume import LabelVolume, isotropic_grid

BG = 0
L_WM, R_WM = 2, 41
L_CTX, R_CTX = 3, 42
L_VENT, R_VENT = 4, 43
L_CB_WM, R_CB_WM = 7, 46
L_CB_CTX, R_CB_CTX = 8, 47
L_THAL, R_THAL = 10, 49
L_PUT, R_PUT = 12, 51
L_PAL, R_PAL = 13, 52
L_HIP, R_HIP = 17, 53
L_AMY, R_AMY = 18, 54
BRAINSTEM = 16


def _ellipsoid(coords, center, radii):
    x, y, z = coords
    cx, cy, cz = center
    rx, ry, rz = radii
    return ((x - cx) / rx) ** 2 + ((y - cy) / ry) ** 2 \
        + ((z - cz) / rz) ** 2 <= 1.0


def make_phantom_labels(rng, dims=(32, 32, 32), parcels=False) -> LabelVolume:
    """One jittered phantom. With parcels=True the cortex voxels carry
    parcel ids (aparc-style map for parcellation training) instead of the
    cortex structure ids."""
    dims = tuple(dims)
    d = np.asarray(dims, dtype=np.float64)
    ax = [np.arange(n, dtype=np.float64) for n in dims]
    coords = np.meshgrid(*ax, indexing="ij")
    lab = np.zeros(dims, dtype=np.uint32)

    def jit(scale=1.0):
        return rng.uniform(-1.5, 1.5) * scale

    def rad(base):
        return base * rng.uniform(0.9, 1.1)

    c = d / 2 + np.array([jit(), jit(), jit(0.5)])
    # cerebrum shifted up, cerebellum and brainstem below
    cerebrum_c = c + np.array([0, -0.05 * d[1], 0.12 * d[2]])
    R = d / 2 * 0.82

    ctx = _ellipsoid(coords, cerebrum_c, (rad(R[0] * 0.95),
                                          rad(R[1] * 0.82),
                                          rad(R[2] * 0.66)))
    wm = _ellipsoid(coords, cerebrum_c, (rad(R[0] * 0.72),
                                         rad(R[1] * 0.60),
                                         rad(R[2] * 0.47)))
    vent = _ellipsoid(coords, cerebrum_c + np.array([0, jit(0.5), 0]),
                      (rad(R[0] * 0.28), rad(R[1] * 0.16), rad(R[2] * 0.14)))
    left = coords[0] < c[0]

    lab[ctx] = R_CTX
    lab[ctx & left] = L_CTX
    lab[wm] = R_WM
    lab[wm & left] = L_WM
    lab[vent] = R_VENT
    lab[vent & left] = L_VENT

    # paired subcortical blobs inside the white matter
    def blob(label_l, label_r, offset, radius):
        for sign, label in ((-1, label_l), (+1, label_r)):
            center = cerebrum_c + np.array(
                [sign * offset[0] + jit(0.3), offset[1] + jit(0.3),
                 offset[2] + jit(0.3)])
            m = _ellipsoid(coords, center, (radius, radius, radius))
            lab[m & wm] = label

    s = d[0] / 32.0  # layout tuned on a 32-voxel head, scaled with dims
    blob(L_THAL, R_THAL, (4.2 * s, 1.5 * s, 0.0), rad(2.3 * s))
    blob(L_PUT, R_PUT, (7.0 * s, -1.5 * s, 0.5 * s), rad(2.0 * s))
    blob(L_PAL, R_PAL, (5.5 * s, -3.5 * s, -0.5 * s), rad(1.6 * s))
    blob(L_HIP, R_HIP, (5.0 * s, 3.8 * s, -2.0 * s), rad(1.9 * s))
    blob(L_AMY, R_AMY, (7.2 * s, 3.0 * s, -3.0 * s), rad(1.6 * s))

    # cerebellum: posterior-inferior double ellipsoid with a WM core
    cb_c = c + np.array([0, 0.22 * d[1] + jit(0.4),
                         -0.26 * d[2] + jit(0.4)])
    cb = _ellipsoid(coords, cb_c, (rad(R[0] * 0.52), rad(R[1] * 0.34),
                                   rad(R[2] * 0.30)))
    cb_core = _ellipsoid(coords, cb_c, (rad(R[0] * 0.28), rad(R[1] * 0.17),
                                        rad(R[2] * 0.15)))
    cb &= ~ctx
    cb_core &= cb
    lab[cb] = R_CB_CTX
    lab[cb & left] = L_CB_CTX
    lab[cb_core] = R_CB_WM
    lab[cb_core & left] = L_CB_WM

    # brainstem: anterior-inferior column
    bs_c = c + np.array([jit(0.2), -0.10 * d[1], -0.22 * d[2]])
    bs = _ellipsoid(coords, bs_c, (rad(2.2 * s), rad(2.2 * s), rad(4.5 * s)))
    lab[bs & ~wm & ~vent] = BRAINSTEM

    if parcels:
        # split each cortex hemisphere into anterior/posterior parcels
        anterior = coords[1] < cerebrum_c[1]
        for hemi_mask, base in ((left, 1000), (~left, 2000)):
            m = (lab == (L_CTX if base == 1000 else R_CTX)) & hemi_mask
            lab[m & anterior] = base + 1    # *h bankssts stands in: anterior
            lab[m & ~anterior] = base + 35  # insula id: posterior
    return LabelVolume(isotropic_grid(dims), lab)


def make_phantom_corpus(seed, count, dims=(32, 32, 32), parcels=False):
    """A reproducible list of jittered phantoms."""
    return [make_phantom_labels(RngStream(seed, stream=i), dims=dims,
                                parcels=parcels)
            for i in range(count)]

"""Pure-numpy reference implementations of the hot kernels.

These are the fallback path (SYNTHBRAIN_BACKEND=numpy) and the ground truth
the numba kernels are tested against. All convolutions here are
cross-correlations with zero padding to keep the spatial size fixed.
"""

import numpy as np

from numpy.lib.stride_tricks import sliding_window_view


def conv3d_forward(x, w, b):
    """x: (C, X, Y, Z), w: (F, C, k, k, k), b: (F,) -> (F, X, Y, Z)."""
    k = w.shape[2]
    r = k // 2
    xp = np.pad(x, ((0, 0), (r, r), (r, r), (r, r)))
    # patches: (C, X, Y, Z, k, k, k)
    patches = sliding_window_view(xp, (k, k, k), axis=(1, 2, 3))
    y = np.tensordot(w, patches, axes=([1, 2, 3, 4], [0, 4, 5, 6]))
    return (y + b[:, None, None, None]).astype(x.dtype, copy=False)


def conv3d_backward(x, w, gy):
    """Gradients of conv3d_forward. Returns (gx, gw, gb)."""
    k = w.shape[2]
    r = k // 2
    xp = np.pad(x, ((0, 0), (r, r), (r, r), (r, r)))
    patches = sliding_window_view(xp, (k, k, k), axis=(1, 2, 3))
    gb = gy.sum(axis=(1, 2, 3), dtype=np.float64).astype(gy.dtype)
    # gw[f, c, a, b, d] = sum_p gy[f, p] * x[c, p + (a,b,d) - r]
    gw = np.tensordot(gy, patches, axes=([1, 2, 3], [1, 2, 3]))
    # gx = full correlation of gy with the kernel flipped in space, F<->C swapped.
    gyp = np.pad(gy, ((0, 0), (r, r), (r, r), (r, r)))
    gpatches = sliding_window_view(gyp, (k, k, k), axis=(1, 2, 3))
    wflip = w[:, :, ::-1, ::-1, ::-1]
    gx = np.tensordot(wflip, gpatches, axes=([0, 2, 3, 4], [0, 4, 5, 6]))
    return (gx.astype(x.dtype, copy=False),
            gw.astype(w.dtype, copy=False),
            gb.astype(w.dtype, copy=False))


def maxpool2_forward(x):
    """Factor-2 max pooling. x: (C, X, Y, Z) with even spatial dims.

    Returns (y, arg) where arg holds the flat offset (0..7) of the max inside
    each 2x2x2 block; ties resolve to the lowest offset.
    """
    C, X, Y, Z = x.shape
    blocks = x.reshape(C, X // 2, 2, Y // 2, 2, Z // 2, 2)
    blocks = blocks.transpose(0, 1, 3, 5, 2, 4, 6).reshape(
        C, X // 2, Y // 2, Z // 2, 8)
    arg = blocks.argmax(axis=-1).astype(np.int8)
    y = np.take_along_axis(blocks, arg[..., None].astype(np.intp),
                           axis=-1)[..., 0]
    return np.ascontiguousarray(y), arg


def maxpool2_backward(arg, gy):
    """Routes gy back to the argmax positions. Returns gx of doubled dims."""
    C, Xh, Yh, Zh = gy.shape
    gblocks = np.zeros((C, Xh, Yh, Zh, 8), dtype=gy.dtype)
    np.put_along_axis(gblocks, arg[..., None].astype(np.intp),
                      gy[..., None], axis=-1)
    gx = gblocks.reshape(C, Xh, Yh, Zh, 2, 2, 2).transpose(
        0, 1, 4, 2, 5, 3, 6).reshape(C, Xh * 2, Yh * 2, Zh * 2)
    return np.ascontiguousarray(gx)


def sample_trilinear(vol, cx, cy, cz):
    """Trilinear sampling with edge clamp.

    vol: (X, Y, Z); cx/cy/cz: flat arrays of voxel-space coordinates.
    """
    X, Y, Z = vol.shape
    cx = np.clip(cx, 0.0, X - 1.0)
    cy = np.clip(cy, 0.0, Y - 1.0)
    cz = np.clip(cz, 0.0, Z - 1.0)
    x0 = np.minimum(np.floor(cx).astype(np.intp), X - 2 if X > 1 else 0)
    y0 = np.minimum(np.floor(cy).astype(np.intp), Y - 2 if Y > 1 else 0)
    z0 = np.minimum(np.floor(cz).astype(np.intp), Z - 2 if Z > 1 else 0)
    x1 = np.minimum(x0 + 1, X - 1)
    y1 = np.minimum(y0 + 1, Y - 1)
    z1 = np.minimum(z0 + 1, Z - 1)
    fx = cx - x0
    fy = cy - y0
    fz = cz - z0
    c000 = vol[x0, y0, z0]
    c100 = vol[x1, y0, z0]
    c010 = vol[x0, y1, z0]
    c110 = vol[x1, y1, z0]
    c001 = vol[x0, y0, z1]
    c101 = vol[x1, y0, z1]
    c011 = vol[x0, y1, z1]
    c111 = vol[x1, y1, z1]
    c00 = c000 * (1 - fx) + c100 * fx
    c10 = c010 * (1 - fx) + c110 * fx
    c01 = c001 * (1 - fx) + c101 * fx
    c11 = c011 * (1 - fx) + c111 * fx
    c0 = c00 * (1 - fy) + c10 * fy
    c1 = c01 * (1 - fy) + c11 * fy
    return (c0 * (1 - fz) + c1 * fz).astype(vol.dtype, copy=False)


def sample_nearest(vol, cx, cy, cz):
    """Nearest-neighbour sampling with edge clamp."""
    X, Y, Z = vol.shape
    ix = np.clip(np.rint(cx), 0, X - 1).astype(np.intp)
    iy = np.clip(np.rint(cy), 0, Y - 1).astype(np.intp)
    iz = np.clip(np.rint(cz), 0, Z - 1).astype(np.intp)
    return vol[ix, iy, iz]

"""Minimal single-file NIfTI-1 (.nii / .nii.gz) reading and writing.

Reads: datatypes uint8/int16/int32/float32/float64, 3D images only,
sform or pixdim-diagonal affines, scl_slope/scl_inter scaling, and gzip
wrapping detected from the 0x1f 0x8b magic. Writes: little-endian float32
(intensities) or int32 (labels) with a 348-byte header, extension flag 0,
payload at offset 352, and sform-only pose (qform_code = 0).
"""

import gzip
import struct

import numpy as np

from .errors import (BadMagicError, TruncatedFileError,
                     UnsupportedDatatypeError, UnsupportedDimensionError)
from .volume import Grid3, IntensityVolume, LabelVolume

HEADER_SIZE = 348
VOX_OFFSET = 352

_DTYPES = {
    2: np.dtype(np.uint8),
    4: np.dtype(np.int16),
    8: np.dtype(np.int32),
    16: np.dtype(np.float32),
    64: np.dtype(np.float64),
}
_INT_CODES = (2, 4, 8)


def _read_bytes(path):
    with open(path, "rb") as f:
        head = f.read(2)
        f.seek(0)
        if head == b"\x1f\x8b":
            with gzip.open(f) as gz:
                return gz.read()
        return f.read()


def _unpack(fmt, buf, offset):
    return struct.unpack_from(fmt, buf, offset)


def nifti_read(path, as_labels=None):
    """Load a single-file NIfTI-1 volume.

    as_labels: True/False forces the return type; None auto-detects labels
    from an unscaled integer datatype.
    """
    raw = _read_bytes(path)
    if len(raw) < HEADER_SIZE + 4:
        raise TruncatedFileError(f"{path}: shorter than a NIfTI-1 header")

    sizeof_hdr = _unpack("<i", raw, 0)[0]
    if sizeof_hdr == 348:
        e = "<"
    elif _unpack(">i", raw, 0)[0] == 348:
        e = ">"
    else:
        raise BadMagicError(f"{path}: header length field is not 348")

    magic = raw[344:348]
    if magic == b"ni1\x00":
        raise BadMagicError(
            f"{path}: two-file NIfTI-1 ('ni1') is not supported")
    if magic != b"n+1\x00":
        raise BadMagicError(f"{path}: bad magic {magic!r}")

    dim = _unpack(e + "8h", raw, 40)
    if dim[0] != 3:
        raise UnsupportedDimensionError(
            f"{path}: dim[0]={dim[0]}, only 3D volumes are supported")
    dims = tuple(int(d) for d in dim[1:4])

    datatype = _unpack(e + "h", raw, 70)[0]
    if datatype not in _DTYPES:
        raise UnsupportedDatatypeError(
            f"{path}: unsupported datatype code {datatype}")
    dtype = _DTYPES[datatype].newbyteorder(e)

    pixdim = _unpack(e + "8f", raw, 76)
    spacing = tuple(float(abs(p)) for p in pixdim[1:4])
    vox_offset = int(_unpack(e + "f", raw, 108)[0])
    scl_slope, scl_inter = _unpack(e + "2f", raw, 112)
    sform_code = _unpack(e + "h", raw, 254)[0]

    if sform_code > 0:
        srow = np.array([
            _unpack(e + "4f", raw, 280),
            _unpack(e + "4f", raw, 296),
            _unpack(e + "4f", raw, 312),
        ], dtype=np.float64)
        affine = np.vstack([srow, [0.0, 0.0, 0.0, 1.0]])
        # pixdim can disagree with the sform at float32 precision; the sform
        # is authoritative for pose, so take spacing from its column norms.
        spacing = tuple(np.linalg.norm(affine[:3, :3], axis=0))
    else:
        affine = np.diag([spacing[0], spacing[1], spacing[2], 1.0])

    n = int(np.prod(dims))
    end = vox_offset + n * dtype.itemsize
    if len(raw) < end:
        raise TruncatedFileError(
            f"{path}: payload truncated ({len(raw)} < {end} bytes)")
    data = np.frombuffer(raw, dtype=dtype, count=n, offset=vox_offset)
    # NIfTI payloads are Fortran-ordered (x fastest); our arrays are C-ordered.
    data = data.reshape(dims, order="F")

    grid = Grid3(dims, spacing, affine)
    scaled = scl_slope != 0.0 and not (scl_slope == 1.0 and scl_inter == 0.0)
    if as_labels is None:
        as_labels = datatype in _INT_CODES and not scaled
    if as_labels:
        return LabelVolume(grid, np.ascontiguousarray(data).astype(np.int64))
    out = np.ascontiguousarray(data).astype(np.float32)
    if scaled:
        out = out * np.float32(scl_slope) + np.float32(scl_inter)
    return IntensityVolume(grid, out)


def nifti_write(volume, path):
    """Write a standard-conforming single-file NIfTI-1 (bit-reproducible)."""
    if isinstance(volume, LabelVolume):
        payload = np.asarray(volume.labels, dtype="<i4")
        datatype, bitpix = 8, 32
    else:
        payload = np.asarray(volume.data, dtype="<f4")
        datatype, bitpix = 16, 32

    grid = volume.grid
    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, *grid.dims, 1, 1, 1, 1)
    struct.pack_into("<h", hdr, 70, datatype)
    struct.pack_into("<h", hdr, 72, bitpix)
    struct.pack_into("<8f", hdr, 76, 1.0, *grid.spacing, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", hdr, 108, float(VOX_OFFSET))
    struct.pack_into("<2f", hdr, 112, 1.0, 0.0)               # slope, inter
    struct.pack_into("<h", hdr, 252, 0)                       # qform_code
    struct.pack_into("<h", hdr, 254, 1)                       # sform_code
    aff = grid.affine
    struct.pack_into("<4f", hdr, 280, *aff[0])
    struct.pack_into("<4f", hdr, 296, *aff[1])
    struct.pack_into("<4f", hdr, 312, *aff[2])
    hdr[344:348] = b"n+1\x00"

    body = bytes(hdr) + b"\x00\x00\x00\x00" + \
        payload.tobytes(order="F")
    if str(path).endswith(".gz"):
        # mtime and filename pinned so repeated writes are byte-identical
        with open(path, "wb") as f:
            with gzip.GzipFile(filename="", fileobj=f, mode="wb",
                               mtime=0) as gz:
                gz.write(body)
    else:
        with open(path, "wb") as f:
            f.write(body)

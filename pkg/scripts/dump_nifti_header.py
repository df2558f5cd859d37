#!/usr/bin/env python3
"""Standalone NIfTI-1 header dump.

Parses the 348-byte header with struct only (no dependency on the package),
so it can serve as an independent check of the reader. Prints one
field per line as "name: value".

Usage: python3 scripts/dump_nifti_header.py file.nii[.gz]
"""

import gzip
import struct
import sys

FIELDS = [
    # (offset, struct format, name)
    (0, "i", "sizeof_hdr"),
    (40, "8h", "dim"),
    (70, "h", "datatype"),
    (72, "h", "bitpix"),
    (76, "8f", "pixdim"),
    (108, "f", "vox_offset"),
    (112, "f", "scl_slope"),
    (116, "f", "scl_inter"),
    (252, "h", "qform_code"),
    (254, "h", "sform_code"),
    (280, "4f", "srow_x"),
    (296, "4f", "srow_y"),
    (312, "4f", "srow_z"),
    (344, "4s", "magic"),
]


def main():
    if len(sys.argv) != 2:
        print(__doc__, file=sys.stderr)
        return 2
    path = sys.argv[1]
    with open(path, "rb") as f:
        head = f.read(2)
        f.seek(0)
        raw = gzip.open(f).read(348) if head == b"\x1f\x8b" else f.read(348)
    if len(raw) < 348:
        print("error: file shorter than a NIfTI-1 header", file=sys.stderr)
        return 1
    # sizeof_hdr must read 348 in the file's own byte order
    endian = "<" if struct.unpack("<i", raw[:4])[0] == 348 else ">"
    print(f"endianness: {'little' if endian == '<' else 'big'}")
    for offset, fmt, name in FIELDS:
        vals = struct.unpack_from(endian + fmt, raw, offset)
        if name == "magic":
            print(f"{name}: {vals[0]!r}")
        elif len(vals) == 1:
            print(f"{name}: {vals[0]}")
        else:
            print(f"{name}: {' '.join(repr(round(float(v), 6)) for v in vals)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""ParamSet serialization: versioned little-endian binary plus JSON debug dump.

Binary layout (all integers little-endian):

    magic   4 bytes  b"FMPS"
    version u32      currently 1
    n       u32      number of layout entries
    n times:
        name_len u16, name utf-8 bytes, ndim u8, ndim * u32 dims
    total   u64      value count (must equal the layout sum)
    values  total * f64
"""

import json
import struct

import numpy as np

from ..errors import DataFormatError
from .params import Layout, ParamSet

MAGIC = b"FMPS"
VERSION = 1


def save_paramset(path, ps: ParamSet):
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(ps.layout.entries)))
        for name, shape in ps.layout.entries:
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", len(shape)))
            if shape:
                f.write(struct.pack(f"<{len(shape)}I", *shape))
        f.write(struct.pack("<Q", ps.layout.total))
        f.write(np.asarray(ps.values, dtype="<f8").tobytes())


def _read(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise DataFormatError(f"truncated paramset file while reading {what}")
    return buf


def load_paramset(path) -> ParamSet:
    with open(path, "rb") as f:
        if _read(f, 4, "magic") != MAGIC:
            raise DataFormatError("not a paramset file (bad magic)")
        (version,) = struct.unpack("<I", _read(f, 4, "version"))
        if version != VERSION:
            raise DataFormatError(f"unsupported paramset version {version}")
        (n_entries,) = struct.unpack("<I", _read(f, 4, "entry count"))
        entries = []
        for _ in range(n_entries):
            (name_len,) = struct.unpack("<H", _read(f, 2, "name length"))
            name = _read(f, name_len, "name").decode("utf-8")
            (ndim,) = struct.unpack("<B", _read(f, 1, "ndim"))
            dims = struct.unpack(f"<{ndim}I", _read(f, 4 * ndim, "dims")) if ndim else ()
            entries.append((name, dims))
        layout = Layout(tuple(entries))
        (total,) = struct.unpack("<Q", _read(f, 8, "total"))
        if total != layout.total:
            raise DataFormatError(
                f"declared value count {total} does not match layout total {layout.total}"
            )
        values = np.frombuffer(_read(f, 8 * total, "values"), dtype="<f8").astype(np.float64)
    return ParamSet(layout, values)


def paramset_debug_dict(ps: ParamSet) -> dict:
    return {
        "format": "paramset-debug",
        "version": VERSION,
        "layout": [[name, list(shape)] for name, shape in ps.layout.entries],
        "values": ps.values.tolist(),
    }


def dump_paramset_json(path, ps: ParamSet):
    with open(path, "w") as f:
        json.dump(paramset_debug_dict(ps), f)

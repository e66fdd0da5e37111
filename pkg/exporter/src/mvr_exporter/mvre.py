"""Writer for the MVRE embedding interchange format.

Layout (little-endian): magic "MVRE", u16 version=1, u16 flags (bit0 =
normalized), u32 dim, u64 count, then per record u16 id length, UTF-8 id
bytes, dim float32 values. Records go out in lexicographic id order so the
same store always produces the same bytes.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"MVRE"
VERSION = 1
FLAG_NORMALIZED = 0x0001
_HEADER = struct.Struct("<4sHHIQ")


def write_mvre(path, dim: int, records: dict[str, np.ndarray], normalized: bool = False) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    flags = FLAG_NORMALIZED if normalized else 0
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, flags, dim, len(records)))
        for rec_id in sorted(records):
            values = np.asarray(records[rec_id], dtype="<f4")
            if values.shape != (dim,):
                raise ValueError(f"record {rec_id!r} has shape {values.shape}, want ({dim},)")
            if not np.all(np.isfinite(values)):
                raise ValueError(f"record {rec_id!r} contains NaN/Inf")
            id_bytes = rec_id.encode("utf-8")
            fh.write(struct.pack("<H", len(id_bytes)))
            fh.write(id_bytes)
            fh.write(values.tobytes())

"""Grid-field file format: JSON header + little-endian float64 payload.

Layout of a `.gfd` file:

    magic   b"GFD1"
    u32     header length (little-endian)
    bytes   UTF-8 JSON header: {"d", "L", "N", "components", "time_index"}
    bytes   row-major float64 payload, little-endian
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .grids import GridField, Torus

_MAGIC = b"GFD1"


def write_gfd(path, f: GridField, time_index: int | None = None) -> None:
    header = {
        "d": f.torus.dimension,
        "L": f.torus.length,
        "N": f.torus.points,
        "components": f.components,
        "time_index": time_index,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = np.ascontiguousarray(f.values, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(payload)


def read_gfd(path) -> tuple[GridField, int | None]:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: not a grid-field file")
    (hlen,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8 : 8 + hlen].decode("utf-8"))
    torus = Torus(header["d"], header["L"], header["N"])
    ncomp = header["components"]
    data = np.frombuffer(raw[8 + hlen :], dtype="<f8").astype(float)
    values = data.reshape(torus.shape + (ncomp,))
    return GridField(torus, values), header.get("time_index")

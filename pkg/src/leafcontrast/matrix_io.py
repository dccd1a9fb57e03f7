"""CSV and raw-binary serialization for dense matrices and embeddings.

Binary layout: 8-byte magic, uint32 rows, uint32 cols (little-endian),
then rows*cols little-endian float64 in row-major order.
"""
from __future__ import annotations

import math
import struct
from pathlib import Path

import numpy as np

from .errors import InputError

MAGIC = b"LCMATRX1"
_HEADER = struct.Struct("<8sII")


def _fmt(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(float(v))


def save_matrix(m, path, format: str | None = None) -> None:
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    fmt = format or ("bin" if str(path).endswith(".bin") else "csv")
    if fmt == "bin":
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, m.shape[0], m.shape[1]))
            fh.write(np.ascontiguousarray(m).astype("<f8").tobytes())
    elif fmt == "csv":
        with open(path, "w", newline="\n") as fh:
            for row in m:
                fh.write(",".join(_fmt(v) for v in row) + "\n")
    else:
        raise InputError(f"unknown matrix format {fmt!r}")


def load_matrix(path, format: str | None = None) -> np.ndarray:
    fmt = format or ("bin" if str(path).endswith(".bin") else "csv")
    if fmt == "bin":
        raw = Path(path).read_bytes()
        if len(raw) < _HEADER.size:
            raise InputError("binary matrix too short for header")
        magic, rows, cols = _HEADER.unpack_from(raw)
        if magic != MAGIC:
            raise InputError("bad magic in binary matrix")
        body = raw[_HEADER.size:]
        if len(body) != rows * cols * 8:
            raise InputError(f"binary matrix body has {len(body)} bytes, expected {rows * cols * 8}")
        return np.frombuffer(body, dtype="<f8").reshape(rows, cols).astype(np.float64)
    rows = []
    width = None
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            vals = [float(v) for v in line.split(",")]
        except ValueError as exc:
            raise InputError(f"line {lineno}: {exc}") from None
        if any(math.isnan(v) for v in vals):
            raise InputError(f"line {lineno}: NaN entry")
        if width is None:
            width = len(vals)
        elif len(vals) != width:
            raise InputError(f"line {lineno}: expected {width} columns, got {len(vals)}")
        rows.append(vals)
    if not rows:
        return np.empty((0, 0))
    return np.array(rows, dtype=np.float64)

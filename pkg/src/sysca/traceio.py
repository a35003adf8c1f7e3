"""Versioned binary persistence for trace sets, plus CSV export.

File layout (all little-endian):

    offset  size  field
    0       8     magic "SCATRC01"
    8       4     u32 n       (array dimension)
    12      4     u32 T       (trace length)
    16      8     u64 N       (trace count)
    24      8     u64 L       (metadata JSON byte length)
    32      L     UTF-8 JSON metadata
    32+L    N*T*8 float64 payload, row-major (one trace per row)

Files are byte-identical across platforms for identical inputs. Writes are
atomic (temp file + rename) and refuse to overwrite without the flag.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .power import TraceSet

MAGIC = b"SCATRC01"
_HEADER = struct.Struct("<8sIIQQ")


class TraceFormatError(ValueError):
    """Malformed, truncated, or wrong-version trace file."""


def write_trace_set(ts: TraceSet, path, overwrite: bool = False) -> None:
    path = os.fspath(path)
    if os.path.exists(path) and not overwrite:
        raise FileExistsError(f"{path} exists (pass overwrite=True to replace)")
    N, T = ts.values.shape
    if N < 1:
        raise TraceFormatError("refusing to write an empty trace set")
    meta_blob = json.dumps(ts.meta, sort_keys=True).encode("utf-8")
    header = _HEADER.pack(MAGIC, ts.meta.get("n", 0), T, N, len(meta_blob))
    payload = np.ascontiguousarray(ts.values, dtype="<f8").tobytes()
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(header)
            f.write(meta_blob)
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_trace_set(path) -> TraceSet:
    path = os.fspath(path)
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise TraceFormatError("file too short for header")
    magic, n, T, N, meta_len = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        if magic[:6] == MAGIC[:6]:
            raise TraceFormatError(
                f"unsupported format version {magic!r} (expected {MAGIC!r})"
            )
        raise TraceFormatError(f"bad magic {magic!r}: not a trace file")
    off = _HEADER.size
    if len(raw) < off + meta_len:
        raise TraceFormatError("truncated metadata")
    try:
        meta = json.loads(raw[off : off + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise TraceFormatError(f"corrupt metadata JSON: {e}") from e
    off += meta_len
    expected = N * T * 8
    if len(raw) - off != expected:
        raise TraceFormatError(
            f"truncated payload: expected {expected} bytes, found {len(raw) - off}"
        )
    values = np.frombuffer(raw[off:], dtype="<f8").reshape(N, T).copy()
    return TraceSet(values, meta)


def export_csv(ts: TraceSet, path, overwrite: bool = False) -> None:
    """One row per trace, columns = cycles; full float precision (repr)."""
    path = os.fspath(path)
    if os.path.exists(path) and not overwrite:
        raise FileExistsError(f"{path} exists (pass overwrite=True to replace)")
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            T = ts.values.shape[1]
            f.write(",".join(f"cycle_{t + 1}" for t in range(T)) + "\n")
            for row in ts.values:
                f.write(",".join(repr(float(v)) for v in row) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def import_csv(path, meta: dict | None = None) -> TraceSet:
    path = os.fspath(path)
    values = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.float64, ndmin=2)
    return TraceSet(values, meta or {})

"""Versioned, checksummed container for trained models.

Layout::

    magic (8 bytes) | format version (u32 LE) | payload length (u64 LE)
    | sha256(payload) (32 bytes) | payload

The payload is canonical JSON (sorted keys, no whitespace). Arrays are
stored as dtype, shape and base64 of their little-endian bytes, so floats
survive a round trip bit for bit.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Any

import numpy as np

MAGIC = b"STEMTOX\x00"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sIQ32s")


class BundleIOError(OSError):
    pass


class VersionError(ValueError):
    pass


class ChecksumError(ValueError):
    pass


def _encode(obj: Any) -> Any:
    if isinstance(obj, np.ndarray):
        arr = np.ascontiguousarray(obj)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        return {"__ndarray__": le.dtype.str, "shape": list(arr.shape),
                "data": base64.b64encode(le.tobytes()).decode("ascii")}
    if isinstance(obj, dict):
        bad = [k for k in obj if not isinstance(k, str)]
        if bad:
            raise TypeError(f"bundle keys must be strings, got {bad[:3]}")
        return {k: _encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return {"__float__": repr(obj)}
    return obj


def _decode(obj: Any) -> Any:
    if isinstance(obj, dict):
        if "__ndarray__" in obj:
            raw = base64.b64decode(obj["data"])
            return np.frombuffer(raw, dtype=np.dtype(obj["__ndarray__"])).reshape(obj["shape"]).copy()
        if "__float__" in obj:
            return float(obj["__float__"])
        return {k: _decode(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode(v) for v in obj]
    return obj


def dumps(state: dict) -> bytes:
    payload = json.dumps(_encode(state), sort_keys=True, separators=(",", ":"),
                         allow_nan=False).encode("utf-8")
    return _HEADER.pack(MAGIC, FORMAT_VERSION, len(payload), hashlib.sha256(payload).digest()) + payload


def loads(blob: bytes) -> dict:
    if len(blob) < _HEADER.size:
        raise ChecksumError("bundle is shorter than its header")
    magic, version, length, digest = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise ChecksumError("not a model bundle (bad magic bytes)")
    if version != FORMAT_VERSION:
        raise VersionError(f"bundle format version {version}; this reader supports {FORMAT_VERSION}")
    payload = blob[_HEADER.size:]
    if len(payload) != length:
        raise ChecksumError(f"payload is {len(payload)} bytes, header says {length}")
    if hashlib.sha256(payload).digest() != digest:
        raise ChecksumError("payload checksum mismatch")
    return _decode(json.loads(payload.decode("utf-8")))


def write_atomic(path: str | Path, data: bytes) -> None:
    """Write via a temporary file in the target directory, then rename."""
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent or ".")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise BundleIOError(f"cannot write {path}: {exc}") from exc


def save_state(path: str | Path, state: dict) -> None:
    write_atomic(path, dumps(state))


def load_state(path: str | Path) -> dict:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise BundleIOError(f"cannot read {path}: {exc}") from exc
    return loads(blob)

"""On-disk formats: parameter files, JSONL run logs and CSV tables.

Parameter file layout (all little-endian)::

    b"GALP" | u16 version | 32-byte model hash | u64 P | P x f64 | u64 checksum

The checksum is an 8-byte BLAKE2b digest over every preceding byte.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import struct
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MAGIC = b"GALP"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sH32sQ")


class CorruptionError(ValueError):
    pass


class IncompatibleParamsError(ValueError):
    pass


def _checksum(payload: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


def save_params(path, params, model_hash: bytes) -> None:
    params = np.ascontiguousarray(params, dtype="<f8")
    if len(model_hash) != 32:
        raise ValueError("model hash must be 32 bytes")
    body = _HEADER.pack(MAGIC, FORMAT_VERSION, model_hash, params.size) + params.tobytes()
    Path(path).write_bytes(body + struct.pack("<Q", _checksum(body)))


def load_params(path, model_hash: bytes | None = None) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size + 8:
        raise CorruptionError(f"{path}: file too short")
    magic, version, stored_hash, n = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CorruptionError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CorruptionError(f"{path}: unsupported format version {version}")
    expected = _HEADER.size + 8 * n + 8
    if len(data) != expected:
        raise CorruptionError(f"{path}: expected {expected} bytes, found {len(data)}")
    body, (check,) = data[:-8], struct.unpack("<Q", data[-8:])
    if _checksum(body) != check:
        raise CorruptionError(f"{path}: checksum mismatch")
    if model_hash is not None and stored_hash != model_hash:
        raise IncompatibleParamsError(f"{path}: parameters belong to a different model configuration")
    return np.frombuffer(body, dtype="<f8", offset=_HEADER.size).astype(np.float64)


def format_float(x: float) -> str:
    """17 significant digits: enough to round-trip any float64."""
    return format(float(x), ".17g")


def _normalise(obj):
    # JSON has no NaN/inf, and 17 digits are used for every float
    if isinstance(obj, float) or isinstance(obj, np.floating):
        x = float(obj)
        if not math.isfinite(x):
            return None if math.isnan(x) else ("inf" if x > 0 else "-inf")
        return _RawFloat(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, dict):
        return {k: _normalise(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_normalise(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_normalise(v) for v in obj.tolist()]
    return obj


class _RawFloat(float):
    pass


def dumps(obj) -> str:
    """Stable JSON: insertion-ordered keys, floats at 17 significant digits."""
    return _dump(_normalise(obj))


def _dump(obj) -> str:
    if isinstance(obj, _RawFloat):
        return format_float(obj)
    if isinstance(obj, dict):
        return "{" + ",".join(json.dumps(str(k)) + ":" + _dump(v) for k, v in obj.items()) + "}"
    if isinstance(obj, list):
        return "[" + ",".join(_dump(v) for v in obj) + "]"
    return json.dumps(obj)


def write_jsonl(path, records: Iterable[dict]) -> None:
    with open(path, "w", newline="\n") as fh:
        for rec in records:
            fh.write(dumps(rec))
            fh.write("\n")


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj) + "\n")


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v for v in row])

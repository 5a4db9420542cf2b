"""Deterministic artifact serialization helpers.

Every artifact written by this package must hash identically across runs
for a fixed seed, so formats here avoid timestamps, dict-order dependence
and locale-dependent float text. Binary containers store one canonical
JSON header line followed by raw little-endian array bytes.
"""

from __future__ import annotations

import hashlib
import json
from typing import Any

import numpy as np

CONTAINER_MAGIC = "OPAC1"


def canonical_json(obj: Any) -> str:
    """Serialize with sorted keys and no whitespace so equal content gives equal bytes."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def sha256_of_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def sha256_of_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_of_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def save_container(path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    """Write named arrays plus a metadata dict as one self-describing file."""
    manifest = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        manifest.append([name, arr.dtype.str, list(arr.shape)])
        blobs.append(arr.tobytes())
    header = canonical_json({"magic": CONTAINER_MAGIC, "meta": meta, "arrays": manifest})
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8"))
        fh.write(b"\n")
        for blob in blobs:
            fh.write(blob)


def load_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: not an outageplan container") from exc
    if not isinstance(header, dict) or header.get("magic") != CONTAINER_MAGIC:
        raise ValueError(f"{path}: not an outageplan container")
    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for name, dtype_str, shape in header["arrays"]:
        dtype = np.dtype(dtype_str)
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        arr = np.frombuffer(payload, dtype=dtype, count=count, offset=offset)
        arrays[name] = arr.reshape(shape).copy()
        offset += dtype.itemsize * count
    return header["meta"], arrays


def format_float(x: float) -> str:
    """Shortest decimal text that round-trips the exact double."""
    return repr(float(x))

"""Binary blob + JSON manifest persistence.

One container is a pair of files: ``<stem>.json`` holding the manifest
and ``<stem>.bin`` holding the named arrays back to back, little-endian,
row-major.  The manifest records each array's shape, dtype, and byte
offset, so loading is a single read plus views.  Writes go through a
temporary file and an atomic rename.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from .errors import DataError

FORMAT_VERSION = 1

_DTYPE_TAGS = {
    np.dtype(np.float32): "<f4",
    np.dtype(np.float64): "<f8",
    np.dtype(np.int64): "<i8",
}


def _atomic_write(path: str, payload: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_arrays(stem: str, arrays: dict[str, np.ndarray], extra: dict | None = None) -> None:
    """Write named arrays and manifest metadata under ``stem``."""
    index = {}
    chunks = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        if arr.dtype not in _DTYPE_TAGS:
            raise DataError(f"container: unsupported dtype {arr.dtype} for array {name!r}")
        tag = _DTYPE_TAGS[arr.dtype]
        raw = arr.astype(tag).tobytes()
        index[name] = {"shape": list(arr.shape), "dtype": tag, "offset": offset}
        chunks.append(raw)
        offset += len(raw)
    manifest = {"format_version": FORMAT_VERSION, "arrays": index, "blob_bytes": offset}
    if extra:
        overlap = set(extra) & set(manifest)
        if overlap:
            raise DataError(f"container: reserved manifest keys {sorted(overlap)}")
        manifest.update(extra)
    _atomic_write(stem + ".bin", b"".join(chunks))
    _atomic_write(stem + ".json", json.dumps(manifest, indent=1, sort_keys=True).encode())


def load_arrays(stem: str) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a container back; returns (manifest, name -> array)."""
    with open(stem + ".json", "rb") as f:
        manifest = json.loads(f.read())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DataError(f"container: unsupported format version {manifest.get('format_version')!r}")
    with open(stem + ".bin", "rb") as f:
        blob = f.read()
    if len(blob) != manifest["blob_bytes"]:
        raise DataError(
            f"container: blob is {len(blob)} bytes, manifest expects {manifest['blob_bytes']}"
        )
    arrays = {}
    for name, entry in manifest["arrays"].items():
        dt = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start = entry["offset"]
        arr = np.frombuffer(blob, dtype=dt, count=count, offset=start)
        arrays[name] = arr.reshape(entry["shape"]).copy()
    return manifest, arrays

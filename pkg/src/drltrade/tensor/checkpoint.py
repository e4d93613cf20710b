"""Checkpoint files: a key/value manifest plus a raw little-endian float64 blob.

``<stem>.manifest`` is UTF-8 text, one ``key = value`` per line::

    format = drltrade-checkpoint
    version = 1
    dtype = float64-le
    blob = final.bin
    meta.<key> = <free text>
    array.<name> = shape=32x1x8x8 offset=0 nbytes=16384

``<stem>.bin`` holds the arrays back to back in manifest order, row-major.
Offsets are in bytes from the start of the blob. Zero-dimensional arrays
are written with ``shape=scalar``.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping

import numpy as np

from ..errors import DataError

FORMAT = "drltrade-checkpoint"
VERSION = "1"
_DTYPE = np.dtype("<f8")


def _paths(stem) -> tuple[Path, Path]:
    stem = Path(stem)
    return stem.with_name(stem.name + ".manifest"), stem.with_name(stem.name + ".bin")


def save_checkpoint(stem, arrays: Mapping[str, np.ndarray], meta: Mapping[str, str] | None = None) -> Path:
    manifest_path, blob_path = _paths(stem)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"format = {FORMAT}", f"version = {VERSION}", "dtype = float64-le", f"blob = {blob_path.name}"]
    for key, value in (meta or {}).items():
        text = str(value)
        if "\n" in text or "=" in key or key != key.strip():
            raise ValueError(f"meta entry {key!r} cannot be stored on one line")
        lines.append(f"meta.{key} = {text}")
    offset = 0
    chunks = []
    for name, arr in arrays.items():
        if "=" in name or " " in name:
            raise ValueError(f"array name {name!r} contains a reserved character")
        data = np.array(arr, dtype=_DTYPE, order="C")
        shape = "x".join(str(d) for d in data.shape) if data.ndim else "scalar"
        lines.append(f"array.{name} = shape={shape} offset={offset} nbytes={data.nbytes}")
        chunks.append(data.tobytes())
        offset += data.nbytes
    blob_path.write_bytes(b"".join(chunks))
    manifest_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest_path


def read_manifest(path) -> dict[str, str]:
    entries: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        key, sep, value = line.partition(" = ")
        if not sep:
            raise DataError("expected 'key = value'", row=lineno, path=str(path))
        entries[key.strip()] = value
    return entries


def load_checkpoint(stem) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    """Inverse of :func:`save_checkpoint`. ``stem`` may also be the manifest path."""
    stem = Path(stem)
    if stem.suffix == ".manifest":
        stem = stem.with_suffix("")
    manifest_path, _ = _paths(stem)
    entries = read_manifest(manifest_path)
    if entries.get("format") != FORMAT or entries.get("version") != VERSION:
        raise DataError("not a drltrade checkpoint manifest", path=str(manifest_path))
    blob = (manifest_path.parent / entries["blob"]).read_bytes()
    arrays: dict[str, np.ndarray] = {}
    meta: dict[str, str] = {}
    for key, value in entries.items():
        if key.startswith("meta."):
            meta[key[5:]] = value
        elif key.startswith("array."):
            fields = dict(part.split("=", 1) for part in value.split())
            shape = () if fields["shape"] == "scalar" else tuple(int(d) for d in fields["shape"].split("x"))
            offset, nbytes = int(fields["offset"]), int(fields["nbytes"])
            if offset + nbytes > len(blob):
                raise DataError(f"array {key[6:]} runs past the end of the blob", path=str(manifest_path))
            data = np.frombuffer(blob, dtype=_DTYPE, count=nbytes // 8, offset=offset)
            arrays[key[6:]] = data.reshape(shape).astype(np.float64)
    return arrays, meta

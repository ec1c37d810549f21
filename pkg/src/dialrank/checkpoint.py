"""Named-tensor archive: UTF-8 JSON manifest + little-endian float32 payload.

Layout::

    NTAR1 <manifest_nbytes>\n
    <manifest JSON>\n
    <payload: concatenated little-endian float32 buffers>

The manifest lists (name, shape, offset) per tensor, offsets in bytes into
the payload, plus an optional free-form ``meta`` object. Values are stored
as float32, so a float32 round-trip is bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MAGIC = "NTAR1"


class ArchiveError(ValueError):
    """The file is not a well-formed tensor archive."""


def save_tensors(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write named arrays (cast to little-endian float32) plus metadata."""
    entries = []
    buffers = []
    offset = 0
    for name, arr in tensors.items():
        buf = np.ascontiguousarray(arr, dtype="<f4")
        entries.append({"name": name, "shape": list(buf.shape), "offset": offset})
        buffers.append(buf.tobytes())
        offset += buf.nbytes
    manifest = json.dumps({"tensors": entries, "meta": meta or {}}, ensure_ascii=False)
    raw = manifest.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(f"{MAGIC} {len(raw)}\n".encode("ascii"))
        fh.write(raw)
        fh.write(b"\n")
        for buf in buffers:
            fh.write(buf)


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read an archive back; returns ({name: float32 array}, meta)."""
    data = Path(path).read_bytes()
    newline = data.find(b"\n")
    if newline < 0:
        raise ArchiveError(f"{path}: missing header line")
    header = data[:newline].decode("ascii", errors="replace").split()
    if len(header) != 2 or header[0] != MAGIC:
        raise ArchiveError(f"{path}: bad magic {header!r}")
    try:
        manifest_len = int(header[1])
    except ValueError:
        raise ArchiveError(f"{path}: bad manifest length {header[1]!r}") from None
    start = newline + 1
    try:
        manifest = json.loads(data[start : start + manifest_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArchiveError(f"{path}: unreadable manifest: {exc}") from None
    payload = data[start + manifest_len + 1 :]

    tensors: dict[str, np.ndarray] = {}
    for entry in manifest.get("tensors", []):
        name, shape, offset = entry["name"], tuple(entry["shape"]), entry["offset"]
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        end = offset + 4 * count
        if end > len(payload):
            raise ArchiveError(f"{path}: payload truncated for tensor {name!r}")
        if name in tensors:
            raise ArchiveError(f"{path}: duplicate tensor name {name!r}")
        tensors[name] = np.frombuffer(payload[offset:end], dtype="<f4").reshape(shape).copy()
    return tensors, manifest.get("meta", {})

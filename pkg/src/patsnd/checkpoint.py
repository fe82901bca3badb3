"""Versioned single-file array checkpoints.

Layout: 8-byte magic, ``<u32 version, u64 header_len>``, a JSON header that
lists each array's name/dtype/shape/offset plus a SHA-256 of the payload, then
the raw little-endian array bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError
from .io import atomic_open

_PREFIX = struct.Struct("<IQ")


def write_arrays(path, magic: bytes, version: int, header: dict, state: dict) -> None:
    arrays = []
    payload = bytearray()
    for name, tensor in state.items():
        arr = tensor.detach().cpu().numpy() if isinstance(tensor, torch.Tensor) else np.asarray(tensor)
        arr = np.ascontiguousarray(arr.astype(arr.dtype.newbyteorder("<"), copy=False))
        raw = arr.tobytes()
        arrays.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
                       "offset": len(payload), "nbytes": len(raw)})
        payload += raw
    head = dict(header, arrays=arrays, sha256=hashlib.sha256(payload).hexdigest())
    blob = json.dumps(head).encode("utf-8")
    with atomic_open(path, "wb") as fh:
        fh.write(magic)
        fh.write(_PREFIX.pack(version, len(blob)))
        fh.write(blob)
        fh.write(payload)


def read_arrays(path, magic: bytes, version: int):
    """Return ``(header, {name: tensor})``; any defect raises CheckpointError."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    if data[: len(magic)] != magic:
        raise CheckpointError(f"{path}: wrong file type (bad magic header)")
    try:
        found, hlen = _PREFIX.unpack_from(data, len(magic))
    except struct.error:
        raise CheckpointError(f"{path}: truncated checkpoint header") from None
    if found != version:
        raise CheckpointError(f"{path}: incompatible checkpoint version {found} (expected {version})")
    start = len(magic) + _PREFIX.size
    try:
        header = json.loads(data[start : start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CheckpointError(f"{path}: corrupted checkpoint header") from None
    payload = data[start + hlen :]
    if not isinstance(header, dict) or hashlib.sha256(payload).hexdigest() != header.get("sha256"):
        raise CheckpointError(f"{path}: checkpoint payload checksum mismatch")
    state = {}
    try:
        for meta in header["arrays"]:
            count = int(np.prod(meta["shape"], dtype=np.int64))
            arr = np.frombuffer(payload, dtype=np.dtype(meta["dtype"]), offset=meta["offset"], count=count)
            state[meta["name"]] = torch.from_numpy(arr.reshape(meta["shape"]).copy())
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: malformed array table ({exc})") from None
    return header, state

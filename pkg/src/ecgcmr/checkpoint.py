"""Versioned checkpoint container.

Layout: magic line, 8-byte little-endian header length, JSON header
(version, kind, metadata, ordered parameter records, payload SHA-256),
then the raw little-endian arrays concatenated in header order. Writing
the same parameters twice produces identical bytes, and a truncated or
corrupted file fails the payload hash check before anything is loaded.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

MAGIC = b"ECGCMR-CKPT\n"
VERSION = 1

_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8"}


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, kind: str, meta: dict, params: dict) -> str:
    """Write atomically; params is an ordered {name: ndarray} mapping.

    Arrays are stored as little-endian float32 unless already float64/int64.
    Returns the payload hash.
    """
    path = Path(path)
    records = []
    payload = bytearray()
    for name in params:
        arr = np.asarray(params[name])
        if arr.dtype == np.float64:
            dtype = "float64"
        elif np.issubdtype(arr.dtype, np.integer):
            dtype = "int64"
        else:
            dtype = "float32"
        raw = np.ascontiguousarray(arr).astype(_DTYPES[dtype]).tobytes()
        records.append({"name": name, "shape": list(arr.shape), "dtype": dtype})
        payload.extend(raw)
    payload = bytes(payload)
    payload_hash = hashlib.sha256(payload).hexdigest()
    header = json.dumps({
        "version": VERSION, "kind": kind, "meta": meta,
        "params": records, "payload_sha256": payload_hash,
    }, sort_keys=True).encode()

    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(header).to_bytes(8, "little"))
        fh.write(header)
        fh.write(payload)
    os.replace(tmp, path)
    return payload_hash


def load_checkpoint(path):
    """Returns (kind, meta, {name: ndarray}); verifies version and hash."""
    path = Path(path)
    blob = path.read_bytes()
    if not blob.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint container")
    off = len(MAGIC)
    hlen = int.from_bytes(blob[off:off + 8], "little")
    off += 8
    header = json.loads(blob[off:off + hlen].decode())
    off += hlen
    if header["version"] != VERSION:
        raise CheckpointError(
            f"{path}: unsupported container version {header['version']}")
    payload = blob[off:]
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise CheckpointError(f"{path}: payload hash mismatch (truncated or "
                              "corrupted file); refusing partial load")
    params = {}
    cursor = 0
    for rec in header["params"]:
        dtype = _DTYPES[rec["dtype"]]
        count = int(np.prod(rec["shape"])) if rec["shape"] else 1
        nbytes = count * np.dtype(dtype).itemsize
        arr = np.frombuffer(payload[cursor:cursor + nbytes], dtype=dtype)
        params[rec["name"]] = arr.reshape(rec["shape"]).copy()
        cursor += nbytes
    if cursor != len(payload):
        raise CheckpointError(f"{path}: payload length mismatch")
    return header["kind"], header["meta"], params


def checkpoint_kind(path) -> str:
    kind, _, _ = load_checkpoint(path)
    return kind

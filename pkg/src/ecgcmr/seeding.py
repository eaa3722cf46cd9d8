"""Deterministic seed fan-out.

One master seed drives the whole pipeline. Every module derives its own
substream from (master, *tags) via SHA-256 so that adding a consumer never
shifts the randomness seen by another, and per-sample streams are identical
whether samples are generated serially or in parallel.
"""

from __future__ import annotations

import hashlib

import numpy as np


def subseed(master: int, *tags) -> int:
    """64-bit seed derived from a master seed and a tag path."""
    key = f"{int(master)}|" + "/".join(str(t) for t in tags)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(master: int, *tags) -> np.random.Generator:
    """Independent numpy Generator for (master, *tags)."""
    return np.random.default_rng(subseed(master, *tags))

"""Run provenance: every CLI command emits one manifest recording its
resolved config, content hashes of inputs consumed and outputs produced,
seed, and wall-clock time."""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

from .cohort.dataset import dataset_hash


def artifact_hash(path) -> str:
    """SHA-256 of a file, or the sorted-file hash of a directory."""
    p = Path(path)
    if p.is_dir():
        return dataset_hash(p)
    return hashlib.sha256(p.read_bytes()).hexdigest()


@dataclass
class RunManifest:
    command: str
    seed: int
    config: dict
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    wall_clock_s: float = 0.0

    def add_input(self, path):
        self.inputs[str(path)] = artifact_hash(path)

    def add_output(self, path):
        self.outputs[str(path)] = artifact_hash(path)

    def to_json(self) -> str:
        return json.dumps({
            "command": self.command, "seed": self.seed, "config": self.config,
            "inputs": self.inputs, "outputs": self.outputs,
            "wall_clock_s": self.wall_clock_s,
        }, sort_keys=True, indent=2)


class ManifestWriter:
    """Times a command and writes its manifest atomically."""

    def __init__(self, command: str, seed: int, config: dict, out_dir):
        self.manifest = RunManifest(command=command, seed=seed, config=config)
        self.out_dir = Path(out_dir)
        self._start = time.monotonic()

    def finish(self) -> Path:
        self.manifest.wall_clock_s = time.monotonic() - self._start
        mdir = self.out_dir / "manifests"
        mdir.mkdir(parents=True, exist_ok=True)
        existing = len(list(mdir.glob("*.json")))
        path = mdir / f"{existing:03d}_{self.manifest.command}.json"
        tmp = path.with_name(path.name + f".tmp{os.getpid()}")
        tmp.write_text(self.manifest.to_json())
        os.replace(tmp, path)
        return path

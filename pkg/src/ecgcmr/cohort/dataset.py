"""On-disk cohort format and readers.

A cohort is one directory holding:

* ``manifest.json``  -- cohort id, size, seed, split assignment, covariate
  standardization stats, per-sample metadata (latents, labels, covariates,
  QRS windows).
* ``shapes.json``    -- sidecar mapping each binary file to its shape/dtype.
* ``<sid>_<field>.bin`` -- flat little-endian arrays (float32; masks uint8).

Writers build the directory under a temporary name and rename it into
place, so partially written cohorts are never visible. All readers are
safe to use concurrently once the write completes.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..seeding import substream
from .latents import DISEASE_CLASSES, LatentCardiacState

FORMAT_VERSION = 1

ARRAY_FIELDS = ("ecg", "cmr_la", "cmr_sa", "mask_la", "mask_sa", "phenotypes")
_UINT8_FIELDS = ("mask_la", "mask_sa")
SPLITS = ("train", "val", "test")


@dataclass
class CovariateVector:
    sex: int
    age: float
    mean_heart_rate: float
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for v in (self.sex, self.age, self.mean_heart_rate,
                  *self.extra.values()):
            if not np.isfinite(v):
                raise ValueError("covariates must be finite")

    def to_dict(self) -> dict:
        d = {"sex": int(self.sex), "age": float(self.age),
             "mean_heart_rate": float(self.mean_heart_rate)}
        d.update(self.extra)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CovariateVector":
        extra = {k: v for k, v in d.items()
                 if k not in ("sex", "age", "mean_heart_rate")}
        return cls(sex=d["sex"], age=d["age"],
                   mean_heart_rate=d["mean_heart_rate"], extra=extra)

    def as_array(self, stats: dict) -> np.ndarray:
        """Standardized [sex, age, mean_heart_rate] using cohort stats."""
        out = []
        for name, value in (("sex", self.sex), ("age", self.age),
                            ("mean_heart_rate", self.mean_heart_rate)):
            mean, std = stats[name]
            out.append((value - mean) / max(std, 1e-6))
        return np.array(out)


@dataclass
class PairedSample:
    sid: str
    ecg: np.ndarray
    cmr_la: np.ndarray
    cmr_sa: np.ndarray
    mask_la: np.ndarray
    mask_sa: np.ndarray
    covariates: CovariateVector
    label: str
    phenotypes: np.ndarray
    latent: LatentCardiacState
    qrs_windows: list = field(default_factory=list)

    def validate(self):
        if self.ecg.shape[0] != 12:
            raise ValueError("ECG must have exactly 12 leads")
        if self.cmr_la.shape[0] != self.cmr_sa.shape[0]:
            raise ValueError("paired clips must share the frame count")
        if not self.mask_la.any() or not self.mask_sa.any():
            raise ValueError("heart masks must be nonempty")
        if self.label not in DISEASE_CLASSES:
            raise ValueError(f"unknown label {self.label!r}")
        return self


@dataclass
class CohortManifest:
    cohort_id: str
    n_samples: int
    seed: int
    format_version: int = FORMAT_VERSION
    splits: dict = field(default_factory=dict)
    ratios: tuple = (0.7, 0.1, 0.2)
    covariate_stats: dict = field(default_factory=dict)
    samples: dict = field(default_factory=dict)
    generator_config: dict = field(default_factory=dict)

    def ids(self, split: str | None = None) -> list:
        all_ids = sorted(self.samples)
        if split is None:
            return all_ids
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        return [s for s in all_ids if self.splits[s] == split]

    def to_json(self) -> str:
        payload = {
            "cohort_id": self.cohort_id,
            "n_samples": self.n_samples,
            "seed": self.seed,
            "format_version": self.format_version,
            "splits": self.splits,
            "ratios": list(self.ratios),
            "covariate_stats": self.covariate_stats,
            "samples": self.samples,
            "generator_config": self.generator_config,
        }
        return json.dumps(payload, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "CohortManifest":
        d = json.loads(text)
        return cls(
            cohort_id=d["cohort_id"], n_samples=d["n_samples"],
            seed=d["seed"], format_version=d["format_version"],
            splits=d["splits"], ratios=tuple(d["ratios"]),
            covariate_stats=d["covariate_stats"], samples=d["samples"],
            generator_config=d.get("generator_config", {}),
        )


def split_sizes(n: int, ratios) -> list:
    """Largest-remainder apportionment of n into len(ratios) parts."""
    ratios = [float(r) for r in ratios]
    if any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be positive and sum to 1: {ratios}")
    base = [int(np.floor(r * n)) for r in ratios]
    remainder = n - sum(base)
    fracs = sorted(range(len(ratios)),
                   key=lambda i: (-(ratios[i] * n - base[i]), i))
    for i in range(remainder):
        base[fracs[i]] += 1
    return base


def split_cohort(manifest: CohortManifest, ratios, seed: int) -> CohortManifest:
    """Return a copy of the manifest with a fresh disjoint, exhaustive split."""
    sizes = split_sizes(manifest.n_samples, ratios)
    ids = sorted(manifest.samples)
    order = substream(seed, "split").permutation(len(ids))
    shuffled = [ids[i] for i in order]
    splits = {}
    cursor = 0
    for split_name, size in zip(SPLITS, sizes):
        for sid in shuffled[cursor:cursor + size]:
            splits[sid] = split_name
        cursor += size
    out = CohortManifest(**{**manifest.__dict__})
    out.splits = splits
    out.ratios = tuple(float(r) for r in ratios)
    return out


# ---------------------------------------------------------------------------
# writing
# ---------------------------------------------------------------------------

def _array_bytes(name: str, arr: np.ndarray) -> bytes:
    dtype = "<u1" if name in _UINT8_FIELDS else "<f4"
    return np.ascontiguousarray(arr).astype(dtype).tobytes()


class CohortWriter:
    """Streams samples into a temp directory, renamed on close."""

    def __init__(self, out_dir):
        self.final = Path(out_dir)
        if self.final.exists():
            raise FileExistsError(f"refusing to overwrite {self.final}")
        self.tmp = self.final.with_name(self.final.name + f".tmp{os.getpid()}")
        if self.tmp.exists():
            shutil.rmtree(self.tmp)
        self.tmp.mkdir(parents=True)
        self.shapes = {}

    def add_sample(self, sample: PairedSample):
        sample.validate()
        arrays = {
            "ecg": sample.ecg, "cmr_la": sample.cmr_la,
            "cmr_sa": sample.cmr_sa, "mask_la": sample.mask_la,
            "mask_sa": sample.mask_sa, "phenotypes": sample.phenotypes,
        }
        for name, arr in arrays.items():
            fname = f"{sample.sid}_{name}.bin"
            (self.tmp / fname).write_bytes(_array_bytes(name, arr))
            self.shapes[fname] = {
                "shape": list(arr.shape),
                "dtype": "uint8" if name in _UINT8_FIELDS else "float32",
            }

    def close(self, manifest: CohortManifest):
        (self.tmp / "shapes.json").write_text(
            json.dumps(self.shapes, sort_keys=True, indent=1))
        (self.tmp / "manifest.json").write_text(manifest.to_json())
        os.replace(self.tmp, self.final)
        return self.final


# ---------------------------------------------------------------------------
# reading
# ---------------------------------------------------------------------------

def load_manifest(cohort_dir) -> CohortManifest:
    path = Path(cohort_dir) / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"no manifest in {cohort_dir}")
    return CohortManifest.from_json(path.read_text())


class CohortDataset:
    """Reader over a cohort directory."""

    def __init__(self, cohort_dir):
        self.root = Path(cohort_dir)
        self.manifest = load_manifest(self.root)
        self.shapes = json.loads((self.root / "shapes.json").read_text())

    def ids(self, split: str | None = None) -> list:
        return self.manifest.ids(split)

    def _read(self, sid: str, fieldname: str) -> np.ndarray:
        fname = f"{sid}_{fieldname}.bin"
        meta = self.shapes[fname]
        dtype = "<u1" if meta["dtype"] == "uint8" else "<f4"
        arr = np.fromfile(self.root / fname, dtype=dtype)
        return arr.reshape(meta["shape"]).astype(
            bool if meta["dtype"] == "uint8" else np.float64)

    def ecg(self, sid: str) -> np.ndarray:
        return self._read(sid, "ecg")

    def clip(self, sid: str, view: str) -> np.ndarray:
        return self._read(sid, "cmr_la" if view == "long_axis" else "cmr_sa")

    def mask(self, sid: str, view: str) -> np.ndarray:
        return self._read(sid, "mask_la" if view == "long_axis" else "mask_sa")

    def phenotypes(self, sid: str) -> np.ndarray:
        return self._read(sid, "phenotypes")

    def meta(self, sid: str) -> dict:
        return self.manifest.samples[sid]

    def latent(self, sid: str) -> LatentCardiacState:
        return LatentCardiacState.from_dict(self.meta(sid)["latent"])

    def label(self, sid: str) -> str:
        return self.meta(sid)["label"]

    def label_index(self, sid: str) -> int:
        return DISEASE_CLASSES.index(self.label(sid))

    def binary_label(self, sid: str) -> int:
        return int(self.label(sid) != "none")

    def covariates(self, sid: str) -> CovariateVector:
        return CovariateVector.from_dict(self.meta(sid)["covariates"])

    def covariate_array(self, sid: str) -> np.ndarray:
        return self.covariates(sid).as_array(self.manifest.covariate_stats)

    def sample(self, sid: str) -> PairedSample:
        meta = self.meta(sid)
        return PairedSample(
            sid=sid, ecg=self.ecg(sid),
            cmr_la=self.clip(sid, "long_axis"),
            cmr_sa=self.clip(sid, "short_axis"),
            mask_la=self.mask(sid, "long_axis"),
            mask_sa=self.mask(sid, "short_axis"),
            covariates=self.covariates(sid), label=meta["label"],
            phenotypes=self.phenotypes(sid), latent=self.latent(sid),
            qrs_windows=[tuple(w) for w in meta.get("qrs_windows", [])],
        ).validate()


def dataset_hash(cohort_dir) -> str:
    """SHA-256 over every file in the cohort, sorted by name."""
    root = Path(cohort_dir)
    digest = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        digest.update(path.name.encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()

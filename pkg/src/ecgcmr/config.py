"""Layered run configuration.

Defaults below are the desk-scale settings; a JSON config file and
repeatable ``--set key.path=value`` overrides are merged on top. Unknown
keys are rejected so typos fail fast, and the fully resolved document is
echoed into every run manifest.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path


class ConfigError(ValueError):
    """Invalid configuration (CLI exit code 2)."""


DEFAULTS = {
    "cohort": {
        "n": 300,
        "ecg_len": 1000,
        "sample_rate": 500.0,
        "frames": 12,
        "image_size": 64,
        "n_phenotypes": 8,
        "ratios": [0.7, 0.1, 0.2],
        "hypertrophic_lvm": 0.75,
        "dilated_rvedv": 0.80,
        "restrictive_lvm": 0.50,
        "restrictive_rvedv": 0.25,
    },
    "preprocess": {
        "seasonal_period": 0,
        "wavelet_levels": 3,
        "threshold_scale": 1.0,
        "savgol_window": 11,
        "savgol_polyorder": 3,
        "crop_sa": 44,
        "crop_la": 52,
    },
    "transform": {
        "out_size": 64,
        "ecg_crop_lo": 0.7,
        "ecg_crop_hi": 1.0,
        "p_timeflip": 0.33,
        "p_signflip": 0.33,
        "cmr_rotation": 30.0,
        "p_hflip": 0.5,
        "p_vflip": 0.5,
        "cmr_scale_lo": 0.8,
        "cmr_scale_hi": 1.0,
        "cmr_aspect_lo": 0.9,
        "cmr_aspect_hi": 1.1,
    },
    "ssl": {
        "epochs": 8,
        "batch_size": 32,
        "peak_lr": 1e-4,
        "warmup_frac": 0.1,
        "mask_ratio": 0.75,
        "patch_size": 4,
        "window_size": 4,
        "depths": [2],
        "dims": [96],
        "heads": [4],
        "temperature": 0.1,
        "contrast_weight": 1.0,
        "proj_dim": 64,
        "decoder_hidden": 128,
        "share_weights": False,
    },
    "align": {
        "epochs": 10,
        "batch_size": 8,
        "peak_lr": 1e-4,
        "warmup_frac": 0.1,
        "patch_width": 50,
        "depth": 4,
        "dim": 128,
        "heads": 4,
        "proj_dim": 128,
        "temperature": 0.07,
    },
    "autoencoder": {
        "epochs": 3,
        "batch_size": 8,
        "lr": 1e-3,
        "target_mse": 5e-3,
        "downsample": 4,
        "latent_channels": 4,
        "base_channels": 32,
    },
    "diffusion": {
        "timesteps": 100,
        "epochs": 6,
        "batch_size": 4,
        "lr": 2e-4,
        "base_channels": 32,
        "channel_mults": [1, 2],
        "attn_dim": 32,
        "heads": 4,
        "time_dim": 64,
        "ddim_steps": 20,
        "eta": 0.0,
    },
    "finetune": {
        "max_epochs": 40,
        "warmup_epochs": 10,
        "peak_lr": 1e-4,
        "batch_size": 10,
        "patience": 20,
        "fraction": 1.0,
        "task": "disease_binary",
        "scratch": False,
        "balance": "none",
        "phenotype_indices": [0, 1],
    },
    "evaluate": {
        "bootstrap_b": 1000,
        "confidence": 0.95,
        "threshold": 0.5,
    },
}


def _merge(base: dict, override: dict, prefix: str = ""):
    for key, value in override.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key: {path}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{path} must be a section")
            _merge(base[key], value, prefix=path + ".")
        else:
            base[key] = _coerce(path, base[key], value)


def _coerce(path: str, default, value):
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
        raise ConfigError(f"{path} expects a boolean, got {value!r}")
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, (int, float)) and float(value).is_integer():
            return int(value)
        raise ConfigError(f"{path} expects an integer, got {value!r}")
    if isinstance(default, float):
        if isinstance(value, (int, float)):
            return float(value)
        raise ConfigError(f"{path} expects a number, got {value!r}")
    if isinstance(default, list):
        if isinstance(value, list):
            return value
        raise ConfigError(f"{path} expects a list, got {value!r}")
    if isinstance(default, str):
        if isinstance(value, str):
            return value
        raise ConfigError(f"{path} expects a string, got {value!r}")
    return value


def load_config(path=None) -> dict:
    """Defaults merged with an optional JSON config file."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            document = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        _merge(cfg, document)
    return cfg


def apply_overrides(cfg: dict, assignments) -> dict:
    """Apply repeatable ``key.path=value`` overrides in place."""
    for item in assignments or []:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value: {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw  # bare strings allowed
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"unknown config section: {key}")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key: {key}")
        if isinstance(node[parts[-1]], dict):
            raise ConfigError(f"{key} is a section, not a value")
        node[parts[-1]] = _coerce(key, node[parts[-1]], value)
    return cfg


def config_schema() -> str:
    """Printable schema (the defaults document)."""
    return json.dumps(DEFAULTS, indent=2, sort_keys=True)

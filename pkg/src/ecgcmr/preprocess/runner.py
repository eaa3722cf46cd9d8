"""Batch preprocessing of a cohort directory.

Applies the ECG cleaning chain and/or heart-centered CMR cropping to every
sample, writing a new cohort directory (or atomically swapping the source
when in_place is requested). Augmentation and scaling are training-time
concerns and are NOT applied here.
"""

from __future__ import annotations

import os
import shutil
from pathlib import Path

from ..cohort.dataset import CohortDataset, CohortWriter, PairedSample
from .cmr import CmrClip, HeartMask, crop_mask_to_heart, crop_to_heart
from .ecg import EcgRecord, PreprocessConfig, preprocess_ecg


def preprocess_cohort(src_dir, dst_dir, cfg: dict, modality: str = "both",
                      in_place: bool = False) -> Path:
    """cfg keys: seasonal_period, wavelet_levels, threshold_scale,
    savgol_window, savgol_polyorder, crop_sa, crop_la."""
    if modality not in ("ecg", "cmr", "both"):
        raise ValueError(f"unknown modality {modality!r}")
    src = Path(src_dir)
    dataset = CohortDataset(src)
    dst = (src.with_name(src.name + ".pp-stage") if in_place
           else Path(dst_dir))

    ecg_cfg = PreprocessConfig(
        seasonal_period=cfg["seasonal_period"],
        wavelet_levels=cfg["wavelet_levels"],
        threshold_scale=cfg["threshold_scale"],
        savgol_window=cfg["savgol_window"],
        savgol_polyorder=cfg["savgol_polyorder"])

    writer = CohortWriter(dst)
    for sid in dataset.ids():
        sample = dataset.sample(sid)
        if modality in ("ecg", "both"):
            sample.ecg = preprocess_ecg(EcgRecord(sample.ecg), ecg_cfg).samples
        if modality in ("cmr", "both"):
            sample = _crop_sample(sample, cfg)
        writer.add_sample(sample)

    manifest = dataset.manifest
    manifest.generator_config = dict(manifest.generator_config)
    manifest.generator_config["preprocess"] = dict(cfg) | {"modality": modality}
    writer.close(manifest)

    if in_place:
        old = src.with_name(src.name + ".pp-old")
        os.rename(src, old)
        os.rename(dst, src)
        shutil.rmtree(old)
        return src
    return dst


def _crop_sample(sample: PairedSample, cfg: dict) -> PairedSample:
    for view, field_clip, field_mask, size_key in (
            ("short_axis", "cmr_sa", "mask_sa", "crop_sa"),
            ("long_axis", "cmr_la", "mask_la", "crop_la")):
        clip = CmrClip(getattr(sample, field_clip), view=view)
        mask = HeartMask(getattr(sample, field_mask), view=view)
        size = cfg[size_key]
        setattr(sample, field_clip, crop_to_heart(clip, mask, size).frames)
        setattr(sample, field_mask, crop_mask_to_heart(mask, size).mask)
    return sample

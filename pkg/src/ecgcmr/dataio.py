"""Bridges the on-disk cohort to model-ready tensors.

Training mode applies the stochastic augmentation stacks (seeded per
epoch and sample id); validation/test mode applies only channel-wise
min-max scaling (ECG) or resize + normalize (CMR), matching the
evaluation-path purity contract.
"""

from __future__ import annotations

import numpy as np
import torch

from .cohort.dataset import CohortDataset
from .preprocess.cmr import CmrAugmentPolicy, CmrClip, augment_cmr, normalize_resize
from .preprocess.ecg import AugmentPolicy, EcgRecord, augment_ecg, minmax_scale
from .seeding import subseed


def ecg_policy_from_config(tf: dict) -> AugmentPolicy:
    return AugmentPolicy(
        crop_scale_range=(tf["ecg_crop_lo"], tf["ecg_crop_hi"]),
        p_timeflip=tf["p_timeflip"], p_signflip=tf["p_signflip"])


def cmr_policy_from_config(tf: dict) -> CmrAugmentPolicy:
    return CmrAugmentPolicy(
        max_rotation_deg=tf["cmr_rotation"], p_hflip=tf["p_hflip"],
        p_vflip=tf["p_vflip"], crop_scale=(tf["cmr_scale_lo"], tf["cmr_scale_hi"]),
        crop_aspect=(tf["cmr_aspect_lo"], tf["cmr_aspect_hi"]),
        out_size=tf["out_size"])


class TrainingData:
    """Seeded, transform-aware views over one cohort directory."""

    def __init__(self, dataset: CohortDataset, transform_cfg: dict, seed: int):
        self.dataset = dataset
        self.seed = seed
        self.out_size = transform_cfg["out_size"]
        self.ecg_policy = ecg_policy_from_config(transform_cfg)
        self.cmr_policy = cmr_policy_from_config(transform_cfg)

    # -- single sample views ------------------------------------------------
    def ecg(self, sid: str, mode: str, epoch: int = 0) -> np.ndarray:
        rec = EcgRecord(self.dataset.ecg(sid))
        if mode == "train":
            rec = augment_ecg(rec, subseed(self.seed, "aug-ecg", epoch, sid),
                              self.ecg_policy)
        else:
            rec = minmax_scale(rec)
        return rec.samples

    def clip(self, sid: str, view: str, mode: str, epoch: int = 0) -> np.ndarray:
        clip = CmrClip(self.dataset.clip(sid, view), view=view)
        if mode == "train":
            clip = augment_cmr(clip,
                               subseed(self.seed, "aug-cmr", view, epoch, sid),
                               self.cmr_policy)
        else:
            clip = normalize_resize(clip, self.out_size)
        return clip.frames

    def eval_clip_loader(self):
        """(sid, view) -> normalized clip; the SSL/autoencoder loader."""
        return lambda sid, view: self.clip(sid, view, "eval")

    # -- batch builders -------------------------------------------------------
    def align_batch(self, ids, mode: str, epoch: int = 0):
        ecg = torch.stack([torch.as_tensor(self.ecg(s, mode, epoch),
                                           dtype=torch.float32) for s in ids])
        la = torch.stack([torch.as_tensor(self.clip(s, "long_axis", mode, epoch),
                                          dtype=torch.float32) for s in ids])
        sa = torch.stack([torch.as_tensor(self.clip(s, "short_axis", mode, epoch),
                                          dtype=torch.float32) for s in ids])
        return ecg, la, sa

    def finetune_batch(self, ids, mode: str, epoch: int = 0):
        ecg = torch.stack([torch.as_tensor(self.ecg(s, mode, epoch),
                                           dtype=torch.float32) for s in ids])
        cov = torch.stack([torch.as_tensor(self.dataset.covariate_array(s),
                                           dtype=torch.float32) for s in ids])
        return ecg, cov

    def ecg_eval_batch(self, ids) -> torch.Tensor:
        return torch.stack([torch.as_tensor(self.ecg(s, "eval"),
                                            dtype=torch.float32) for s in ids])

    def clip_eval_batch(self, ids, view: str) -> torch.Tensor:
        return torch.stack([torch.as_tensor(self.clip(s, view, "eval"),
                                            dtype=torch.float32) for s in ids])

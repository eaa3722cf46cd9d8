"""Latent cardiac state and the threshold label map.

The two headline scalars drive both modalities: lvm_like controls
ventricular wall thickness in images and R-wave amplitude in the ECG;
rvedv_like controls cavity size in images and T-wave width in the ECG.
Disease classes are a pure threshold function of the two scalars, so
labels are always recoverable from stored latents.
"""

from __future__ import annotations

from dataclasses import dataclass

DISEASE_CLASSES = ("none", "cm_dilated", "cm_hypertrophic", "cm_restrictive")


@dataclass(frozen=True)
class LabelThresholds:
    """All classes are exceedance-based so the all-zero latent is 'none'.

    Restrictive requires moderately thick walls (lvm above its floor but
    below the hypertrophic cut) together with a small cavity. Defaults give
    roughly 46/54 disease vs none on uniform latents (hypertrophic 0.25,
    dilated 0.15, restrictive 0.0625).
    """

    hypertrophic_lvm: float = 0.75
    dilated_rvedv: float = 0.80
    restrictive_lvm: float = 0.50
    restrictive_rvedv: float = 0.25

    def expected_prevalence(self) -> dict:
        """Analytic class probabilities under independent U[0,1] latents."""
        p_hyper = 1.0 - self.hypertrophic_lvm
        p_dil = self.hypertrophic_lvm * (1.0 - self.dilated_rvedv)
        p_res = ((self.hypertrophic_lvm - self.restrictive_lvm)
                 * self.restrictive_rvedv)
        return {
            "cm_hypertrophic": p_hyper,
            "cm_dilated": p_dil,
            "cm_restrictive": p_res,
            "none": 1.0 - p_hyper - p_dil - p_res,
        }


@dataclass
class LatentCardiacState:
    lvm_like: float
    rvedv_like: float
    rhythm_rate: float
    disease_class: str
    noise_seed: int

    def __post_init__(self):
        if not 0.0 <= self.lvm_like <= 1.0:
            raise ValueError(f"lvm_like out of range: {self.lvm_like}")
        if not 0.0 <= self.rvedv_like <= 1.0:
            raise ValueError(f"rvedv_like out of range: {self.rvedv_like}")
        if not 45.0 <= self.rhythm_rate <= 120.0:
            raise ValueError(f"rhythm_rate out of range: {self.rhythm_rate}")
        if self.disease_class not in DISEASE_CLASSES:
            raise ValueError(f"unknown class {self.disease_class!r}")

    def to_dict(self) -> dict:
        return {
            "lvm_like": self.lvm_like,
            "rvedv_like": self.rvedv_like,
            "rhythm_rate": self.rhythm_rate,
            "disease_class": self.disease_class,
            "noise_seed": self.noise_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LatentCardiacState":
        return cls(**d)


def derive_label(lvm_like: float, rvedv_like: float,
                 thresholds: LabelThresholds | None = None) -> str:
    """Threshold label map; hypertrophic takes precedence, then a large
    cavity marks dilated, then thick-walled small-cavity marks restrictive."""
    t = thresholds or LabelThresholds()
    if lvm_like >= t.hypertrophic_lvm:
        return "cm_hypertrophic"
    if rvedv_like >= t.dilated_rvedv:
        return "cm_dilated"
    if lvm_like >= t.restrictive_lvm and rvedv_like <= t.restrictive_rvedv:
        return "cm_restrictive"
    return "none"

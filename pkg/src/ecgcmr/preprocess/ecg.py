"""ECG cleaning chain and training-time augmentation.

Cleaning order is fixed: seasonal baseline removal -> wavelet denoising ->
Savitzky-Golay smoothing. Augmentation (crop-resize, time reversal, sign
inversion) runs at training time only; validation/test data receive
channel-wise min-max scaling and nothing else.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import savgol_filter

from . import wavelet as wv

N_LEADS = 12

# the composed cleaning pipeline applies stages in exactly this order
PREPROCESS_STAGE_ORDER = ("baseline", "wavelet", "savgol")


@dataclass
class EcgRecord:
    """12-lead ECG in millivolts, shape [12, L]."""

    samples: np.ndarray
    sample_rate: float = 500.0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 2 or self.samples.shape[0] != N_LEADS:
            raise ValueError(f"expected [12, L] samples, got {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("ECG samples must be finite")

    @property
    def length(self) -> int:
        return self.samples.shape[1]

    def with_samples(self, samples: np.ndarray) -> "EcgRecord":
        return EcgRecord(samples=samples, sample_rate=self.sample_rate)


@dataclass
class PreprocessConfig:
    """Settings for the three-stage cleaning chain.

    seasonal_period=0 selects the default of one expected beat at 75 bpm
    (0.8 s of samples). Thresholding uses the universal rule from the
    finest detail band unless a fixed threshold is given.
    """

    seasonal_period: int = 0
    wavelet_name: str = "db6"
    wavelet_levels: int = 3
    threshold_rule: str = "universal"  # "universal" | "fixed"
    threshold_value: float = 0.0       # used when threshold_rule == "fixed"
    threshold_scale: float = 1.0
    savgol_window: int = 11
    savgol_polyorder: int = 3

    def __post_init__(self):
        if self.savgol_window % 2 == 0 or self.savgol_window < 3:
            raise ValueError("savgol_window must be odd and >= 3")
        if self.savgol_polyorder >= self.savgol_window:
            raise ValueError("savgol_polyorder must be < savgol_window")
        if self.seasonal_period < 0 or self.seasonal_period == 1:
            raise ValueError("seasonal_period must be 0 (auto) or >= 2")
        if self.threshold_rule not in ("universal", "fixed"):
            raise ValueError(f"unknown threshold_rule {self.threshold_rule!r}")

    def period_for(self, sample_rate: float) -> int:
        return self.seasonal_period or int(round(0.8 * sample_rate))


def _moving_average_trend(x: np.ndarray, period: int) -> np.ndarray:
    """Centered moving average; even periods use the half-weight endpoints
    convention so a full seasonal cycle averages to zero exactly."""
    if period % 2 == 0:
        w = np.ones(period + 1)
        w[0] = w[-1] = 0.5
        w /= period
    else:
        w = np.ones(period) / period
    half = w.size // 2
    padded = np.pad(x, half, mode="reflect")
    return np.convolve(padded, w, mode="valid")


def remove_baseline(rec: EcgRecord, cfg: PreprocessConfig) -> EcgRecord:
    """Subtract the seasonal-decomposition trend from every lead."""
    period = cfg.period_for(rec.sample_rate)
    if rec.length < 2 * period:
        raise ValueError(
            f"record length {rec.length} < 2x seasonal period {period}")
    out = np.stack([lead - _moving_average_trend(lead, period)
                    for lead in rec.samples])
    return rec.with_samples(out)


def wavelet_denoise(rec: EcgRecord, cfg: PreprocessConfig) -> EcgRecord:
    """Per-lead multilevel wavelet soft-threshold denoising."""
    thresh = cfg.threshold_value if cfg.threshold_rule == "fixed" else None
    out = np.stack([
        wv.denoise_1d(lead, cfg.wavelet_levels, cfg.wavelet_name,
                      threshold=thresh, threshold_scale=cfg.threshold_scale)
        for lead in rec.samples
    ])
    return rec.with_samples(out)


def savgol_smooth(rec: EcgRecord, cfg: PreprocessConfig) -> EcgRecord:
    """Savitzky-Golay smoothing with mirror edge handling."""
    if rec.length < cfg.savgol_window:
        raise ValueError("record shorter than the Savitzky-Golay window")
    out = savgol_filter(rec.samples, cfg.savgol_window, cfg.savgol_polyorder,
                        axis=1, mode="mirror")
    return rec.with_samples(out)


def preprocess_ecg(rec: EcgRecord, cfg: PreprocessConfig) -> EcgRecord:
    """Composed cleaning chain in the fixed stage order."""
    stages = {
        "baseline": remove_baseline,
        "wavelet": wavelet_denoise,
        "savgol": savgol_smooth,
    }
    for name in PREPROCESS_STAGE_ORDER:
        rec = stages[name](rec, cfg)
    return rec


def minmax_scale(rec: EcgRecord) -> EcgRecord:
    """Channel-wise scaling to [-1, 1]; constant leads map to all zeros."""
    out = np.empty_like(rec.samples)
    for i, lead in enumerate(rec.samples):
        lo, hi = lead.min(), lead.max()
        if hi == lo:
            warnings.warn(f"constant lead {i}: min-max scaling emits zeros")
            out[i] = 0.0
        else:
            out[i] = 2.0 * (lead - lo) / (hi - lo) - 1.0
    return rec.with_samples(out)


@dataclass
class AugmentPolicy:
    crop_scale_range: tuple = (0.5, 1.0)
    p_timeflip: float = 0.33
    p_signflip: float = 0.33

    def __post_init__(self):
        lo, hi = self.crop_scale_range
        if not (0.0 < lo <= hi <= 1.0):
            raise ValueError("crop scale range must lie in (0, 1]")
        for p in (self.p_timeflip, self.p_signflip):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")


def augment_ecg(rec: EcgRecord, seed: int, policy: AugmentPolicy) -> EcgRecord:
    """Crop-resize, optional time reversal and sign inversion, then scaling.

    Deterministic given ``seed``. With all probabilities zero and the crop
    scale fixed at 1.0 this reduces exactly to :func:`minmax_scale`.
    """
    rng = np.random.default_rng(seed)
    x = rec.samples
    length = x.shape[1]

    lo, hi = policy.crop_scale_range
    scale = lo if lo == hi else float(rng.uniform(lo, hi))
    win = max(2, int(round(scale * length)))
    if win < length:
        start = int(rng.integers(0, length - win + 1))
        segment = x[:, start:start + win]
        t_out = np.linspace(0.0, win - 1.0, length)
        x = np.stack([np.interp(t_out, np.arange(win), lead)
                      for lead in segment])
    if policy.p_timeflip > 0 and rng.random() < policy.p_timeflip:
        x = x[:, ::-1]
    if policy.p_signflip > 0 and rng.random() < policy.p_signflip:
        x = -x
    return minmax_scale(rec.with_samples(np.ascontiguousarray(x)))


def ecg_transform(rec: EcgRecord, mode: str, policy: AugmentPolicy | None = None,
                  seed: int = 0) -> EcgRecord:
    """Training path applies augmentation; validation/test path scales only."""
    if mode == "train":
        return augment_ecg(rec, seed, policy or AugmentPolicy())
    if mode in ("val", "test", "eval"):
        return minmax_scale(rec)
    raise ValueError(f"unknown mode {mode!r}")

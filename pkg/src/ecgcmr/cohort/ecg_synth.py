"""Synthetic 12-lead ECG from a latent cardiac state.

Each beat is a sum of Gaussian P/QRS/T bumps. The three component trains
are mixed into 12 leads by a fixed linear matrix, then low-frequency
baseline drift and white noise are added. The R-wave amplitude scales with
lvm_like and the T-wave width with rvedv_like, so the latents survive
channel-wise min-max scaling (relative amplitudes and durations carry the
information, not absolute gain).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# fixed lead mixing of (P, QRS, T) component trains; rows loosely follow
# the sign/size pattern of limb and precordial leads (aVR inverted)
LEAD_MIX = np.array([
    [1.00, 1.00, 1.00],   # I
    [1.10, 1.15, 1.05],   # II
    [0.35, 0.45, 0.30],   # III
    [-0.95, -1.05, -0.95],  # aVR
    [0.45, 0.40, 0.50],   # aVL
    [0.80, 0.90, 0.75],   # aVF
    [0.25, -0.60, 0.35],  # V1
    [0.40, -0.20, 0.55],  # V2
    [0.55, 0.45, 0.70],   # V3
    [0.70, 1.10, 0.85],   # V4
    [0.75, 1.20, 0.80],   # V5
    [0.70, 1.05, 0.70],   # V6
])


@dataclass
class EcgSynthConfig:
    length: int = 1000
    sample_rate: float = 500.0
    p_amp: float = 0.15          # mV
    t_amp: float = 0.35          # mV
    qrs_amp_base: float = 0.8    # mV
    qrs_amp_span: float = 1.6    # mV per unit lvm_like
    qrs_sigma_s: float = 0.012
    p_sigma_s: float = 0.025
    t_sigma_base_s: float = 0.030
    t_sigma_span_s: float = 0.050  # seconds per unit rvedv_like
    drift_amp_range: tuple = (0.05, 0.25)   # mV
    drift_freq_range: tuple = (0.15, 0.40)  # Hz
    noise_sigma: float = 0.03    # mV


def _bump_train(t: np.ndarray, centers: np.ndarray, amp: float, sigma: float):
    out = np.zeros_like(t)
    for c in centers:
        out += amp * np.exp(-0.5 * ((t - c) / sigma) ** 2)
    return out


def synthesize_ecg(lvm_like: float, rvedv_like: float, rhythm_rate: float,
                   rng: np.random.Generator, cfg: EcgSynthConfig):
    """Returns (signal [12, L] in mV, info dict with QRS windows and parts)."""
    fs = cfg.sample_rate
    t = np.arange(cfg.length) / fs
    period = 60.0 / rhythm_rate
    first = 0.35 * period
    centers = np.arange(first, t[-1] + 0.5 * period, period)

    qrs_amp = cfg.qrs_amp_base + cfg.qrs_amp_span * lvm_like
    t_sigma = cfg.t_sigma_base_s + cfg.t_sigma_span_s * rvedv_like

    p_train = _bump_train(t, centers - 0.16 * np.minimum(period, 0.8),
                          cfg.p_amp, cfg.p_sigma_s)
    qrs_train = (_bump_train(t, centers, qrs_amp, cfg.qrs_sigma_s)
                 - _bump_train(t, centers + 0.030, 0.22 * qrs_amp,
                               cfg.qrs_sigma_s))
    t_train = _bump_train(t, centers + 0.30 * np.minimum(period, 0.9),
                          cfg.t_amp, t_sigma)

    clean = LEAD_MIX @ np.stack([p_train, qrs_train, t_train])

    # baseline drift and white noise are the only stochastic parts
    drift = np.empty_like(clean)
    for lead in range(12):
        amp = rng.uniform(*cfg.drift_amp_range)
        freq = rng.uniform(*cfg.drift_freq_range)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        drift[lead] = amp * np.sin(2.0 * np.pi * freq * t + phase)
    noise = rng.normal(0.0, cfg.noise_sigma, size=clean.shape)

    half = 4.0 * cfg.qrs_sigma_s * fs
    qrs_windows = [
        (int(max(0, round(c * fs - half))),
         int(min(cfg.length, round(c * fs + half))))
        for c in centers if 0 <= c * fs < cfg.length
    ]
    info = {
        "qrs_windows": qrs_windows,
        "clean": clean,
        "baseline_and_noise": drift + noise,
    }
    return clean + drift + noise, info

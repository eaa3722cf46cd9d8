"""Synthetic CMR phantoms.

Short-axis view: concentric ellipses, a bright myocardial ring around a
mid-intensity cavity. Wall thickness tracks lvm_like; cavity radius tracks
rvedv_like; both oscillate over the clip to mimic one cardiac cycle.
Long-axis view: an elongated four-chamber-like phantom (bright wall,
cavity split by septal and atrioventricular bands).

Intensity bands (background ~0.1, cavity ~0.45, wall ~0.9) are kept apart
so simple thresholds can measure the geometry; the oracle module relies on
this.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BACKGROUND = 0.10
CAVITY = 0.45
WALL = 0.90


@dataclass
class CmrSynthConfig:
    frames: int = 12
    image_size: int = 64
    sa_cavity_base: float = 6.0     # px
    sa_cavity_span: float = 0.5     # relative span with rvedv_like
    sa_wall_base: float = 2.6       # px
    sa_wall_span: float = 1.5       # relative span with lvm_like
    la_cavity_a: float = 13.0       # px, long semi-axis
    la_cavity_b: float = 8.0        # px, short semi-axis
    la_cavity_span: float = 0.35
    la_wall_base: float = 2.0
    la_wall_span: float = 1.3
    contraction_range: tuple = (0.10, 0.30)
    brightness_range: tuple = (0.80, 1.00)
    pixel_noise: float = 0.02


def _phase(n_frames: int) -> np.ndarray:
    """0 at end-diastole (frame 0), 1 at peak systole (mid clip)."""
    t = np.arange(n_frames)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * t / n_frames))


def _radial(size: int, cy: float, cx: float, ay: float = 1.0, ax: float = 1.0):
    yy, xx = np.mgrid[0:size, 0:size]
    return np.sqrt(((yy - cy) / ay) ** 2 + ((xx - cx) / ax) ** 2)


def synthesize_sa(lvm_like: float, rvedv_like: float, rng: np.random.Generator,
                  cfg: CmrSynthConfig):
    """Returns (clip [T,S,S] in [0,1], mask [S,S] bool, geometry dict)."""
    size = cfg.image_size
    contraction = rng.uniform(*cfg.contraction_range)
    brightness = rng.uniform(*cfg.brightness_range)
    cy = size / 2 + rng.uniform(-2, 2)
    cx = size / 2 + rng.uniform(-2, 2)

    r_cav0 = cfg.sa_cavity_base * (1.0 + cfg.sa_cavity_span * rvedv_like)
    wall0 = cfg.sa_wall_base * (1.0 + cfg.sa_wall_span * lvm_like)
    phases = _phase(cfg.frames)

    dist = _radial(size, cy, cx, ay=1.0, ax=1.08)
    frames = np.empty((cfg.frames, size, size))
    r_cavs, walls = [], []
    for i, ph in enumerate(phases):
        r_cav = r_cav0 * (1.0 - contraction * ph)
        wall = wall0 * (1.0 + 0.30 * ph)
        img = np.full((size, size), BACKGROUND)
        img[dist <= r_cav + wall] = WALL * brightness
        img[dist <= r_cav] = CAVITY
        frames[i] = img
        r_cavs.append(r_cav)
        walls.append(wall)
    frames += rng.normal(0.0, cfg.pixel_noise, size=frames.shape)
    np.clip(frames, 0.0, 1.0, out=frames)

    mask = dist <= r_cav0 + wall0
    geometry = {
        "cavity_radius": np.array(r_cavs),
        "wall_thickness": np.array(walls),
        "contraction": contraction,
        "brightness": brightness,
    }
    return frames, mask, geometry


def synthesize_la(lvm_like: float, rvedv_like: float, rng: np.random.Generator,
                  cfg: CmrSynthConfig):
    """Elongated four-chamber-like phantom; same return contract as SA."""
    size = cfg.image_size
    contraction = rng.uniform(*cfg.contraction_range)
    brightness = rng.uniform(*cfg.brightness_range)
    cy = size / 2 + rng.uniform(-2, 2)
    cx = size / 2 + rng.uniform(-2, 2)

    a0 = cfg.la_cavity_a * (1.0 + cfg.la_cavity_span * rvedv_like)
    b0 = cfg.la_cavity_b * (1.0 + 0.5 * cfg.la_cavity_span * rvedv_like)
    wall0 = cfg.la_wall_base * (1.0 + cfg.la_wall_span * lvm_like)
    phases = _phase(cfg.frames)

    yy, xx = np.mgrid[0:size, 0:size]
    frames = np.empty((cfg.frames, size, size))
    cavity_areas = []
    for i, ph in enumerate(phases):
        a = a0 * (1.0 - contraction * ph)
        b = b0 * (1.0 - 0.7 * contraction * ph)
        wall = wall0 * (1.0 + 0.25 * ph)
        ell = np.sqrt(((yy - cy) / a) ** 2 + ((xx - cx) / b) ** 2)
        img = np.full((size, size), BACKGROUND)
        img[ell <= 1.0 + wall / min(a, b)] = WALL * brightness
        cavity = ell <= 1.0
        img[cavity] = CAVITY
        # septal band and atrioventricular plane split four chambers
        img[cavity & (np.abs(xx - cx) < 1.2)] = WALL * brightness
        img[cavity & (np.abs(yy - (cy + 0.25 * a)) < 1.2)] = WALL * brightness
        frames[i] = img
        cavity_areas.append(np.pi * a * b)
    frames += rng.normal(0.0, cfg.pixel_noise, size=frames.shape)
    np.clip(frames, 0.0, 1.0, out=frames)

    ell0 = np.sqrt(((yy - cy) / a0) ** 2 + ((xx - cx) / b0) ** 2)
    mask = ell0 <= 1.0 + wall0 / min(a0, b0)
    geometry = {
        "cavity_area": np.array(cavity_areas),
        "contraction": contraction,
        "brightness": brightness,
    }
    return frames, mask, geometry

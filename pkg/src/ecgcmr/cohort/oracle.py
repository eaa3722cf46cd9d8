"""Threshold-based pixel readouts of the phantom geometry.

These measurements are independent of every model in the pipeline: they
exploit the generator's separated intensity bands (background ~0.1,
cavity ~0.45, wall >= ~0.68) to recover areas and intensities directly
from frames. Tests use them to verify the shared-latent coupling and the
generation-correlation harness uses them as the phenotype readout.
"""

from __future__ import annotations

import numpy as np

WALL_THRESHOLD = 0.65
CAVITY_LOW = 0.28


def _wall_pixels(frame: np.ndarray) -> np.ndarray:
    return frame > WALL_THRESHOLD


def _cavity_pixels(frame: np.ndarray) -> np.ndarray:
    return (frame > CAVITY_LOW) & (frame <= WALL_THRESHOLD)


def denormalize(frames: np.ndarray) -> np.ndarray:
    """Map normalized clips ((v - 0.5) / 0.5) back to [0, 1]."""
    return np.clip(frames * 0.5 + 0.5, 0.0, 1.0)


def wall_area(clip: np.ndarray) -> float:
    """Mean bright-wall pixel count per frame."""
    return float(np.mean([_wall_pixels(f).sum() for f in clip]))


def cavity_area(clip: np.ndarray) -> float:
    return float(np.mean([_cavity_pixels(f).sum() for f in clip]))


def contraction_fraction(clip: np.ndarray) -> float:
    areas = np.array([_cavity_pixels(f).sum() for f in clip], dtype=float)
    peak = areas.max()
    return float(1.0 - areas.min() / peak) if peak > 0 else 0.0


def wall_intensity(clip: np.ndarray) -> float:
    vals = [f[_wall_pixels(f)] for f in clip]
    vals = np.concatenate([v for v in vals if v.size] or [np.zeros(1)])
    return float(vals.mean())


def outer_radius(clip: np.ndarray) -> float:
    total = np.mean([(_wall_pixels(f) | _cavity_pixels(f)).sum() for f in clip])
    return float(np.sqrt(total / np.pi))


# proxies aligned index-for-index with the generator's base phenotypes
BASE_READOUTS = (
    ("sa", wall_area),            # 0: lvm_like
    ("sa", cavity_area),          # 1: rvedv_like
    ("sa", wall_area),            # 2: wall area index
    ("sa", cavity_area),          # 3: cavity area index
    ("la", cavity_area),          # 4: LA cavity area index
    ("sa", contraction_fraction),  # 5: contraction fraction
    ("sa", wall_intensity),       # 6: wall brightness
    ("sa", outer_radius),         # 7: outer extent
)


def oracle_phenotypes(sa_clip: np.ndarray, la_clip: np.ndarray,
                      n_phenotypes: int) -> np.ndarray:
    """Image-measured proxy for each phenotype entry.

    Entries beyond the 8 base definitions cycle through the base readouts
    (matching how the generator extends its phenotype vector).
    """
    base = np.array([
        fn(sa_clip if view == "sa" else la_clip)
        for view, fn in BASE_READOUTS
    ])
    reps = int(np.ceil(n_phenotypes / base.size))
    return np.tile(base, reps)[:n_phenotypes]

"""CMR clip reduction, heart-centered cropping, augmentation, normalization.

A clip is a stack of grayscale frames in [0, 1]. One geometric transform is
drawn per clip and applied identically to all frames. Validation/test data
receive bilinear resizing and (v - 0.5) / 0.5 normalization only.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

LONG_AXIS = "long_axis"
SHORT_AXIS = "short_axis"


@dataclass
class CmrClip:
    """frames: [T, H, W] grayscale array."""

    frames: np.ndarray
    view: str = SHORT_AXIS

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=float)
        if self.frames.ndim != 3:
            raise ValueError(f"expected [T, H, W] frames, got {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("frame values must be finite")
        if self.view not in (LONG_AXIS, SHORT_AXIS):
            raise ValueError(f"unknown view {self.view!r}")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    def with_frames(self, frames: np.ndarray) -> "CmrClip":
        return CmrClip(frames=frames, view=self.view)


@dataclass
class HeartMask:
    mask: np.ndarray
    view: str = SHORT_AXIS

    def __post_init__(self):
        self.mask = np.asarray(self.mask).astype(bool)
        if self.mask.ndim != 2:
            raise ValueError("mask must be [H, W]")
        if not self.mask.any():
            raise ValueError("heart mask is empty")


def select_mid_slice(volume: np.ndarray, view: str = SHORT_AXIS) -> CmrClip:
    """Take slice floor(S/2) of a [H, W, S, T] volume as a T-frame clip."""
    volume = np.asarray(volume, dtype=float)
    if volume.ndim != 4:
        raise ValueError(f"expected [H, W, S, T] volume, got {volume.shape}")
    n_slices = volume.shape[2]
    if n_slices < 1:
        raise ValueError("empty slice axis")
    mid = volume[:, :, n_slices // 2, :]
    return CmrClip(frames=np.moveaxis(mid, -1, 0), view=view)


def crop_window(mask: np.ndarray, crop_size: int):
    """Top-left corner of a crop_size square centered on the mask bbox.

    The corner may be negative or exceed the image; callers zero-pad.
    """
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        raise ValueError("heart mask is empty")
    rc = (rows.min() + rows.max()) // 2
    cc = (cols.min() + cols.max()) // 2
    return rc - crop_size // 2, cc - crop_size // 2


def _crop_padded(img: np.ndarray, r0: int, c0: int, size: int) -> np.ndarray:
    out = np.zeros((size, size), dtype=img.dtype)
    r1, c1 = r0 + size, c0 + size
    sr0, sc0 = max(r0, 0), max(c0, 0)
    sr1, sc1 = min(r1, img.shape[0]), min(c1, img.shape[1])
    if sr0 < sr1 and sc0 < sc1:
        out[sr0 - r0:sr1 - r0, sc0 - c0:sc1 - c0] = img[sr0:sr1, sc0:sc1]
    return out


def crop_to_heart(clip: CmrClip, mask: HeartMask, crop_size: int) -> CmrClip:
    """Crop every frame to a crop_size square centered on the mask bbox."""
    if mask.view != clip.view:
        raise ValueError("mask/clip view mismatch")
    r0, c0 = crop_window(mask.mask, crop_size)
    frames = np.stack([_crop_padded(f, r0, c0, crop_size) for f in clip.frames])
    return clip.with_frames(frames)


def crop_mask_to_heart(mask: HeartMask, crop_size: int) -> HeartMask:
    r0, c0 = crop_window(mask.mask, crop_size)
    return HeartMask(mask=_crop_padded(mask.mask.astype(np.uint8), r0, c0,
                                       crop_size).astype(bool), view=mask.view)


def bilinear_resize(frame: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel sample centers and edge clamping.

    Source coordinate of output pixel d is (d + 0.5) * in/out - 0.5; exact
    identity when the size is unchanged.
    """
    in_h, in_w = frame.shape
    if (in_h, in_w) == (out_h, out_w):
        return frame.copy()
    ys = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    ys = np.clip(ys, 0, in_h - 1)
    xs = np.clip(xs, 0, in_w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = frame[np.ix_(y0, x0)] * (1 - wx) + frame[np.ix_(y0, x1)] * wx
    bot = frame[np.ix_(y1, x0)] * (1 - wx) + frame[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bot * wy


def normalize_resize(clip: CmrClip, out_size: int) -> CmrClip:
    """Bilinear resize to out_size x out_size, then (v - 0.5) / 0.5.

    Inputs are expected in [0, 1]; out-of-range values are clamped with a
    warning.
    """
    if out_size < 1:
        raise ValueError("out_size must be >= 1")
    frames = clip.frames
    if frames.min() < 0.0 or frames.max() > 1.0:
        warnings.warn("clip intensities outside [0, 1]; clamping")
        frames = np.clip(frames, 0.0, 1.0)
    frames = np.stack([bilinear_resize(f, out_size, out_size) for f in frames])
    return clip.with_frames((frames - 0.5) / 0.5)


@dataclass
class CmrAugmentPolicy:
    max_rotation_deg: float = 30.0
    p_hflip: float = 0.5
    p_vflip: float = 0.5
    crop_scale: tuple = (0.8, 1.0)
    crop_aspect: tuple = (0.9, 1.1)
    out_size: int = 64

    def __post_init__(self):
        if not 0.0 <= self.max_rotation_deg <= 180.0:
            raise ValueError("rotation range invalid")
        lo, hi = self.crop_scale
        if not (0.0 < lo <= hi <= 1.0):
            raise ValueError("crop scale range must lie in (0, 1]")
        alo, ahi = self.crop_aspect
        if not (0.0 < alo <= ahi):
            raise ValueError("aspect range invalid")


def _geometric_augment(clip: CmrClip, rng: np.random.Generator,
                       policy: CmrAugmentPolicy) -> CmrClip:
    """Draw one geometric transform and apply it to every frame."""
    frames = clip.frames
    t, h, w = frames.shape

    angle = 0.0
    if policy.max_rotation_deg > 0:
        angle = float(rng.uniform(-policy.max_rotation_deg,
                                  policy.max_rotation_deg))
    hflip = policy.p_hflip > 0 and rng.random() < policy.p_hflip
    vflip = policy.p_vflip > 0 and rng.random() < policy.p_vflip
    slo, shi = policy.crop_scale
    scale = slo if slo == shi else float(rng.uniform(slo, shi))
    alo, ahi = policy.crop_aspect
    aspect = alo if alo == ahi else float(rng.uniform(alo, ahi))

    if angle != 0.0:
        frames = np.stack([
            ndimage.rotate(f, angle, reshape=False, order=1,
                           mode="constant", cval=0.0)
            for f in frames
        ])
    if hflip:
        frames = frames[:, :, ::-1]
    if vflip:
        frames = frames[:, ::-1, :]

    area = scale * h * w
    ch = min(h, max(1, int(round(np.sqrt(area / aspect)))))
    cw = min(w, max(1, int(round(np.sqrt(area * aspect)))))
    if (ch, cw) != (h, w):
        top = int(rng.integers(0, h - ch + 1))
        left = int(rng.integers(0, w - cw + 1))
        frames = frames[:, top:top + ch, left:left + cw]
    return clip.with_frames(np.ascontiguousarray(frames))


def augment_cmr(clip: CmrClip, seed: int, policy: CmrAugmentPolicy,
                normalize: bool = True) -> CmrClip:
    """Rotation, flips, random resized crop; then resize + normalize.

    Deterministic given ``seed``. The identity policy (rotation 0, flips
    off, scale and aspect fixed at 1) reduces to :func:`normalize_resize`.
    """
    out = _geometric_augment(clip, np.random.default_rng(seed), policy)
    if normalize:
        out = normalize_resize(out, policy.out_size)
    return out


def cmr_transform(clip: CmrClip, mode: str, policy: CmrAugmentPolicy | None = None,
                  seed: int = 0, out_size: int | None = None) -> CmrClip:
    """Training path augments; validation/test path normalizes and resizes."""
    if mode == "train":
        return augment_cmr(clip, seed, policy or CmrAugmentPolicy(
            out_size=out_size or 64))
    if mode in ("val", "test", "eval"):
        return normalize_resize(clip, out_size or (policy.out_size if policy else 64))
    raise ValueError(f"unknown mode {mode!r}")

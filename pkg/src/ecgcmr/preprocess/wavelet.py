"""Periodized orthogonal wavelet transform with embedded db6 filters.

The scaling filter is embedded as constants (derived once by spectral
factorization) so there is no dependency on an external coefficient table;
its defining conditions (unit energy, sqrt(2) sum, shift-2 orthogonality,
six vanishing moments) are asserted by unit tests.

The transform uses circular (periodized) convolution. On even-length
signals with length >= 2 * filter length at every level the analysis
matrix is exactly orthogonal, so reconstruction is exact and soft
thresholding can only shrink signal energy. Odd intermediate lengths are
edge-padded by one sample and trimmed on reconstruction.
"""

from __future__ import annotations

import numpy as np

# db6 scaling (lowpass reconstruction) filter, 12 taps.
DB6_H = np.array([
    1.1154074335010923e-01, 4.9462389039845289e-01,
    7.5113390802109792e-01, 3.1525035170920357e-01,
    -2.2626469396543653e-01, -1.2976686756726535e-01,
    9.7501605587317963e-02, 2.7522865530303826e-02,
    -3.1582039317486175e-02, 5.5384220116135800e-04,
    4.7772575109454535e-03, -1.0773010853084640e-03,
])

# quadrature mirror highpass: g[n] = (-1)^n h[F-1-n]
DB6_G = np.array([(-1) ** n * DB6_H[DB6_H.size - 1 - n]
                  for n in range(DB6_H.size)])

_FILTERS = {"db6": (DB6_H, DB6_G)}


def _analysis_step(x: np.ndarray, h: np.ndarray, g: np.ndarray):
    """One periodized analysis level. x must have even length."""
    n = x.size
    f = h.size
    # a[k] = sum_m h[m] x[(2k + m) mod n] (and likewise for d with g)
    idx = (2 * np.arange(n // 2)[:, None] + np.arange(f)[None, :]) % n
    win = x[idx]
    return win @ h, win @ g


def _synthesis_step(a: np.ndarray, d: np.ndarray, h: np.ndarray, g: np.ndarray):
    """Inverse of :func:`_analysis_step` (adjoint of the orthogonal matrix)."""
    n = 2 * a.size
    f = h.size
    x = np.zeros(n)
    pos = (2 * np.arange(a.size)[:, None] + np.arange(f)[None, :]) % n
    np.add.at(x, pos, a[:, None] * h[None, :])
    np.add.at(x, pos, d[:, None] * g[None, :])
    return x


def wavedec(x: np.ndarray, levels: int, wavelet: str = "db6"):
    """Multilevel periodized DWT.

    Returns (approx, [detail_levels coarsest..finest], pad_flags) where
    pad_flags records the one-sample edge pads applied at odd lengths.
    """
    if wavelet not in _FILTERS:
        raise ValueError(f"unsupported wavelet: {wavelet!r}")
    h, g = _FILTERS[wavelet]
    a = np.asarray(x, dtype=float)
    details = []
    pads = []
    for _ in range(levels):
        if a.size % 2:
            a = np.concatenate([a, a[-1:]])
            pads.append(True)
        else:
            pads.append(False)
        if a.size < 2 * h.size:
            raise ValueError(
                f"signal too short for {levels} levels (reached {a.size})")
        a, d = _analysis_step(a, h, g)
        details.append(d)
    return a, details[::-1], pads


def waverec(approx: np.ndarray, details, pads, wavelet: str = "db6"):
    """Inverse of :func:`wavedec`."""
    h, g = _FILTERS[wavelet]
    a = approx
    for d, padded in zip(details, reversed(pads)):
        a = _synthesis_step(a, d, h, g)
        if padded:
            a = a[:-1]
    return a


def soft_threshold(coeffs: np.ndarray, thresh: float) -> np.ndarray:
    return np.sign(coeffs) * np.maximum(np.abs(coeffs) - thresh, 0.0)


def universal_threshold(finest_detail: np.ndarray, n_samples: int) -> float:
    """sigma_hat * sqrt(2 ln L) with sigma_hat = MAD / 0.6745."""
    sigma = np.median(np.abs(finest_detail)) / 0.6745
    return float(sigma * np.sqrt(2.0 * np.log(n_samples)))


def denoise_1d(x: np.ndarray, levels: int, wavelet: str = "db6",
               threshold: float | None = None,
               threshold_scale: float = 1.0) -> np.ndarray:
    """Soft-threshold the detail bands of a multilevel decomposition.

    threshold=None selects the universal threshold from the finest band.
    """
    a, details, pads = wavedec(x, levels, wavelet)
    if threshold is None:
        threshold = universal_threshold(details[-1], x.size) * threshold_scale
    details = [soft_threshold(d, threshold) for d in details]
    return waverec(a, details, pads, wavelet)

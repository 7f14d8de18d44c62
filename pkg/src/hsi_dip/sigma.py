"""Blind Gaussian noise level from the finest Haar diagonal subband (wavelet MAD)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cube import HsiCube

MAD_NORMALIZER = 0.6745


@dataclass(frozen=True)
class SigmaEstimate:
    per_band: np.ndarray
    pooled: float

    def to_dict(self) -> dict:
        return {"pooled": self.pooled, "per_band": [float(v) for v in self.per_band]}


def dwt_hh(image: np.ndarray) -> np.ndarray:
    """Single-level orthonormal Haar HH subband; odd trailing row/col dropped."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] < 2 or img.shape[1] < 2:
        raise ValueError(f"need a 2-D image of at least 2x2, got shape {img.shape}")
    h, w = img.shape[0] // 2 * 2, img.shape[1] // 2 * 2
    img = img[:h, :w]
    a, b = img[0::2, 0::2], img[0::2, 1::2]
    c, d = img[1::2, 0::2], img[1::2, 1::2]
    return (a - b - c + d) / 2.0


def estimate_sigma(cube: HsiCube | np.ndarray) -> SigmaEstimate:
    """Per-band median(|HH|)/0.6745, pooled by the mean over bands."""
    data = cube.data if isinstance(cube, HsiCube) else np.asarray(cube)
    if data.ndim == 2:
        data = data[:, :, None]
    per_band = np.array([np.median(np.abs(dwt_hh(data[:, :, i]))) / MAD_NORMALIZER
                         for i in range(data.shape[2])])
    return SigmaEstimate(per_band=per_band, pooled=float(per_band.mean()))

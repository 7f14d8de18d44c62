"""Band-averaged image quality metrics (peak fixed at 1.0 for normalized cubes)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .cube import HsiCube

PSNR_CAP_DB = 100.0
SSIM_WIN = 11
SSIM_STD = 1.5
K1, K2 = 0.01, 0.03


@dataclass(frozen=True)
class MetricsReport:
    mpsnr: float
    mssim: float
    nmse: float
    per_band_psnr: np.ndarray
    per_band_ssim: np.ndarray

    def to_dict(self) -> dict:
        return {
            "mpsnr": self.mpsnr,
            "mssim": self.mssim,
            "nmse": self.nmse,
            "per_band_psnr": [float(v) for v in self.per_band_psnr],
            "per_band_ssim": [float(v) for v in self.per_band_ssim],
        }


def _arrays(ref, est) -> tuple[np.ndarray, np.ndarray]:
    r = ref.data if isinstance(ref, HsiCube) else np.asarray(ref)
    e = est.data if isinstance(est, HsiCube) else np.asarray(est)
    if r.shape != e.shape:
        raise ValueError(f"shape mismatch: {r.shape} vs {e.shape}")
    if r.ndim == 2:
        r, e = r[:, :, None], e[:, :, None]
    return r.astype(np.float64), e.astype(np.float64)


def nmse(ref, est) -> float:
    r, e = _arrays(ref, est)
    denom = np.sum(r * r)
    if denom == 0:
        raise ValueError("NMSE undefined for an all-zero reference")
    return float(np.sum((e - r) ** 2) / denom)


def mpsnr(ref, est, peak: float = 1.0) -> tuple[float, np.ndarray]:
    r, e = _arrays(ref, est)
    mse = np.mean((e - r) ** 2, axis=(0, 1))
    with np.errstate(divide="ignore"):
        psnr = np.where(mse > 0, 10.0 * np.log10(peak**2 / np.where(mse > 0, mse, 1.0)), PSNR_CAP_DB)
    psnr = np.minimum(psnr, PSNR_CAP_DB)
    return float(psnr.mean()), psnr


def _gaussian_window() -> np.ndarray:
    x = np.arange(SSIM_WIN) - SSIM_WIN // 2
    g = np.exp(-0.5 * (x / SSIM_STD) ** 2)
    return g / g.sum()


def _filter_valid(img: np.ndarray, w: np.ndarray) -> np.ndarray:
    out = correlate1d(correlate1d(img, w, axis=0, mode="constant"), w, axis=1, mode="constant")
    p = SSIM_WIN // 2
    return out[p:-p, p:-p]


def ssim_terms(ref: np.ndarray, est: np.ndarray, data_range: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Luminance map and contrast-structure map of one band ('valid' window positions).

    The SSIM map is their elementwise product.
    """
    if ref.shape != est.shape:
        raise ValueError(f"shape mismatch: {ref.shape} vs {est.shape}")
    if ref.ndim != 2 or min(ref.shape) < SSIM_WIN:
        raise ValueError(f"image {ref.shape} smaller than the {SSIM_WIN}x{SSIM_WIN} SSIM window")
    c1, c2 = (K1 * data_range) ** 2, (K2 * data_range) ** 2
    w = _gaussian_window()
    x, y = ref.astype(np.float64), est.astype(np.float64)
    mx, my = _filter_valid(x, w), _filter_valid(y, w)
    sxx = _filter_valid(x * x, w) - mx * mx
    syy = _filter_valid(y * y, w) - my * my
    sxy = _filter_valid(x * y, w) - mx * my
    lum = (2 * mx * my + c1) / (mx * mx + my * my + c1)
    cs = (2 * sxy + c2) / (sxx + syy + c2)
    return lum, cs


def mssim(ref, est) -> tuple[float, np.ndarray]:
    r, e = _arrays(ref, est)
    per_band = np.empty(r.shape[2])
    for i in range(r.shape[2]):
        if np.array_equal(r[:, :, i], e[:, :, i]):
            per_band[i] = 1.0
            continue
        lum, cs = ssim_terms(r[:, :, i], e[:, :, i])
        per_band[i] = float(np.mean(lum * cs))
    return float(per_band.mean()), per_band


def evaluate(ref, est) -> MetricsReport:
    p, pb = mpsnr(ref, est)
    s, sb = mssim(ref, est)
    return MetricsReport(mpsnr=p, mssim=s, nmse=nmse(ref, est), per_band_psnr=pb, per_band_ssim=sb)

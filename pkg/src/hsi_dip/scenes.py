"""Procedural hyperspectral scenes for tests and offline demos.

No public HSI ships with the package, so the desk-scale experiments run on a
linear-mixing scene: a handful of smooth endmember spectra weighted by
piecewise-smooth abundance maps (blocky "buildings", curved "roads", a smooth
vegetation field). The result is spatially structured and spectrally low rank,
the two properties a convolutional prior exploits on real urban imagery.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

from .cube import HsiCube

# mean-square intensity of a min-max normalized DC Mall segment, backed out of
# its 17.47 dB noisy MPSNR at 5 dB SNR: 10**(-1.747) * 10**0.5
DC_MALL_POWER = 0.0566


def _endmembers(rng: np.random.Generator, k: int, bands: int) -> np.ndarray:
    t = np.linspace(0.0, 1.0, bands)
    spectra = np.empty((k, bands))
    for i in range(k):
        s = rng.uniform(0.05, 0.3) + rng.uniform(-0.2, 0.4) * t
        for _ in range(rng.integers(2, 5)):
            c, w, a = rng.uniform(0, 1), rng.uniform(0.05, 0.25), rng.uniform(-0.25, 0.6)
            s += a * np.exp(-0.5 * ((t - c) / w) ** 2)
        spectra[i] = np.clip(s, 0.02, None)
    return spectra


def _abundances(rng: np.random.Generator, k: int, h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    maps = np.zeros((k, h, w))
    # smooth background field
    maps[0] = gaussian_filter(rng.standard_normal((h, w)), sigma=max(h, w) / 6)
    maps[0] = 1.0 + maps[0] / (np.abs(maps[0]).max() + 1e-12)
    for i in range(1, k):
        for _ in range(rng.integers(3, 8)):
            kind = rng.integers(0, 3)
            if kind == 0:  # rectangle
                r0, c0 = rng.integers(0, h), rng.integers(0, w)
                rh, cw = rng.integers(h // 12 + 1, h // 3 + 2), rng.integers(w // 12 + 1, w // 3 + 2)
                maps[i, r0 : r0 + rh, c0 : c0 + cw] += rng.uniform(0.6, 1.5)
            elif kind == 1:  # disc
                cy, cx, rad = rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0.05, 0.2)
                maps[i][(yy - cy) ** 2 + (xx - cx) ** 2 < rad**2] += rng.uniform(0.6, 1.5)
            else:  # curved band
                a, ph, off, wd = rng.uniform(0.05, 0.2), rng.uniform(0, 6.3), rng.uniform(0.1, 0.9), rng.uniform(0.02, 0.05)
                if rng.random() < 0.5:
                    mask = np.abs(yy - off - a * np.sin(6 * xx + ph)) < wd
                else:
                    mask = np.abs(xx - off - a * np.sin(6 * yy + ph)) < wd
                maps[i][mask] += rng.uniform(0.6, 1.5)
        maps[i] = gaussian_filter(maps[i], sigma=0.7)
    maps = np.clip(maps, 0.0, None) + 1e-3
    return maps / maps.sum(axis=0, keepdims=True)


def synthetic_scene(height: int = 64, width: int = 64, bands: int = 16, endmembers: int = 5,
                    seed: int = 0, bright_targets: int = 3, power: float = DC_MALL_POWER) -> HsiCube:
    """Normalized (height, width, bands) cube, deterministic in ``seed``.

    A few small high-albedo rooftops hold the maximum (1.0); the rest of the
    scene is scaled so the mean-square intensity equals ``power`` whenever that
    is reachable. Leaving most of the scene in the lower part of [0, 1] mimics
    normalized urban airborne imagery, so an SNR in dB means roughly what it
    means on real data.
    """
    rng = np.random.default_rng(seed)
    spectra = _endmembers(rng, endmembers, bands)
    abund = _abundances(rng, endmembers, height, width)
    base = np.einsum("khw,kb->hwb", abund, spectra)
    shade = 1.0 + 0.08 * gaussian_filter(rng.standard_normal((height, width)), 1.5)
    base *= shade[:, :, None]
    base -= base.min()

    roof = _endmembers(rng, 1, bands)[0]
    roof /= roof.max()
    mask = np.zeros((height, width), dtype=bool)
    for _ in range(bright_targets):
        r0, c0 = rng.integers(0, max(1, height - 2)), rng.integers(0, max(1, width - 2))
        rh, cw = rng.integers(2, max(3, height // 10)), rng.integers(2, max(3, width // 10))
        mask[r0 : r0 + rh, c0 : c0 + cw] = True

    roofs = np.where(mask[:, :, None], roof[None, None, :] * np.clip(shade, None, 1.0)[:, :, None], 0.0)
    if not mask.any():
        roofs[..., :] = 0.0
    rest = np.where(mask[:, :, None], 0.0, base)
    n = base.size
    # solve  (k^2 * sum(rest^2) + sum(roofs^2)) / n = power  for the scale k
    k2 = (power * n - np.sum(roofs**2)) / max(np.sum(rest**2), 1e-12)
    k = np.sqrt(max(k2, 0.0))
    k = min(k, 0.95 / max(rest.max(), 1e-12))
    cube = k * rest + roofs
    if cube.max() < 1.0:
        cube /= cube.max()
    wl = np.linspace(400.0, 2400.0, bands)
    return HsiCube(np.clip(cube, 0.0, 1.0).astype(np.float32), normalized=True, wavelengths=wl)

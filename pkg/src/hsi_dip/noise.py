"""Seeded corruption of clean cubes: y = x + w + s.

Three components are available and compose in a fixed order (Gaussian, then
stripes, then sparse impulses so that impulses overwrite everything else).
Each component draws from its own stream spawned off the spec seed so adding
or removing one component never changes the realisation of the others.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .cube import HsiCube

DEFAULT_STRIPE_COLUMN_FRACTION = 0.2
DEFAULT_STRIPE_AMPLITUDE = 0.25


@dataclass(frozen=True)
class NoiseSpec:
    gaussian_snr_db: Optional[float] = None
    sparse_fraction: Optional[float] = None
    stripe_band_count: Optional[int] = None
    stripe_column_fraction: float = DEFAULT_STRIPE_COLUMN_FRACTION
    stripe_amplitude: float = DEFAULT_STRIPE_AMPLITUDE
    seed: int = 0

    def __post_init__(self):
        if self.gaussian_snr_db is None and self.sparse_fraction is None and self.stripe_band_count is None:
            raise ValueError("NoiseSpec needs at least one noise component")
        if self.gaussian_snr_db is not None and np.isnan(self.gaussian_snr_db):
            raise ValueError("gaussian_snr_db must not be NaN")
        if self.sparse_fraction is not None and not 0.0 <= self.sparse_fraction <= 1.0:
            raise ValueError(f"sparse_fraction {self.sparse_fraction} outside [0, 1]")
        if self.stripe_band_count is not None and self.stripe_band_count < 0:
            raise ValueError("stripe_band_count must be non-negative")
        if not 0.0 <= self.stripe_column_fraction <= 1.0:
            raise ValueError("stripe_column_fraction outside [0, 1]")
        if self.stripe_amplitude <= 0:
            raise ValueError("stripe_amplitude must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSpec":
        return cls(**d)


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def gaussian_sigma_for_snr(clean: np.ndarray, snr_db: float) -> float:
    """Noise std giving ``snr_db`` = 10 log10(signal power / noise power)."""
    power = float(np.mean(np.square(clean, dtype=np.float64)))
    if np.isposinf(snr_db):
        return 0.0
    return float(np.sqrt(power / 10.0 ** (snr_db / 10.0)))


def add_gaussian_snr(cube: HsiCube, snr_db: float, seed=0) -> tuple[HsiCube, float]:
    """Add i.i.d. N(0, sigma^2) noise at the requested SNR; output is not clipped."""
    if not np.isfinite(snr_db) and not np.isposinf(snr_db):
        raise ValueError(f"snr_db must be finite, got {snr_db}")
    sigma = gaussian_sigma_for_snr(cube.data, snr_db)
    if sigma == 0.0:
        return cube.with_data(cube.data), 0.0
    w = _rng(seed).standard_normal(cube.shape) * sigma
    return cube.with_data(cube.data.astype(np.float64) + w), sigma


def add_sparse(cube: HsiCube, fraction: float, seed=0) -> HsiCube:
    """Salt-and-pepper: round(fraction*n) voxels drawn without replacement set to 0 or 1."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"sparse fraction {fraction} outside [0, 1]")
    rng = _rng(seed)
    count = int(round(fraction * cube.n))
    flat = cube.data.reshape(-1).copy()
    if count:
        idx = rng.choice(cube.n, size=count, replace=False)
        flat[idx] = rng.integers(0, 2, size=count).astype(np.float32)
    return cube.with_data(flat.reshape(cube.shape))


def add_stripes(cube: HsiCube, band_count: int, column_fraction: float = DEFAULT_STRIPE_COLUMN_FRACTION,
                amplitude: float = DEFAULT_STRIPE_AMPLITUDE, seed=0) -> HsiCube:
    """Column-constant offsets in ``band_count`` randomly chosen bands."""
    if band_count > cube.bands:
        raise ValueError(f"band_count {band_count} exceeds the cube's {cube.bands} bands")
    if band_count < 0:
        raise ValueError("band_count must be non-negative")
    if not 0.0 <= column_fraction <= 1.0:
        raise ValueError("column_fraction outside [0, 1]")
    rng = _rng(seed)
    out = cube.data.astype(np.float64)
    ncols = int(round(column_fraction * cube.width))
    for band in rng.choice(cube.bands, size=band_count, replace=False):
        cols = rng.choice(cube.width, size=ncols, replace=False)
        out[:, cols, band] += rng.uniform(-amplitude, amplitude, size=ncols)
    return cube.with_data(out)


def apply_spec(cube: HsiCube, spec: NoiseSpec) -> tuple[HsiCube, float]:
    """Corrupt ``cube`` per ``spec``. Returns (noisy cube, Gaussian sigma or 0)."""
    if spec.stripe_band_count is not None and spec.stripe_band_count > cube.bands:
        raise ValueError(f"stripe_band_count {spec.stripe_band_count} exceeds {cube.bands} bands")
    g_seed, st_seed, sp_seed = np.random.SeedSequence(int(spec.seed)).spawn(3)
    noisy, sigma = cube, 0.0
    if spec.gaussian_snr_db is not None:
        noisy, sigma = add_gaussian_snr(cube, spec.gaussian_snr_db, np.random.default_rng(g_seed))
    if spec.stripe_band_count:
        noisy = add_stripes(noisy, spec.stripe_band_count, spec.stripe_column_fraction,
                            spec.stripe_amplitude, np.random.default_rng(st_seed))
    if spec.sparse_fraction:
        noisy = add_sparse(noisy, spec.sparse_fraction, np.random.default_rng(sp_seed))
    return noisy, sigma

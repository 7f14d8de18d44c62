"""Hyperspectral cube container and the native header+raw file format.

A cube lives in memory as a float32 array indexed (row, col, band). On disk it
is a JSON header ``<name>.json`` next to a raw little-endian payload
``<name>.raw``; band-sequential (bsq), band-interleaved-by-line (bil) and
band-interleaved-by-pixel (bip) payloads are accepted on load.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


class CubeError(Exception):
    """Base class for cube I/O and shape errors."""


class CubeNotFoundError(CubeError, FileNotFoundError):
    pass


class CubeSizeMismatchError(CubeError, ValueError):
    pass


class UnsupportedDtypeError(CubeError, ValueError):
    pass


_DTYPES = {"f32": np.float32}
_ORDERS = {"little": "<", "big": ">"}
# axis order of the payload, expressed as names of (row, col, band)
_INTERLEAVE = {"bsq": ("band", "row", "col"), "bil": ("row", "band", "col"), "bip": ("row", "col", "band")}


@dataclass(frozen=True)
class CubeHeader:
    width: int
    height: int
    bands: int
    dtype: str = "f32"
    order: str = "little"
    interleave: str = "bsq"
    wavelengths: Optional[Sequence[float]] = None

    def __post_init__(self):
        for name in ("width", "height", "bands"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"header {name} must be positive")
        if self.dtype not in _DTYPES:
            raise UnsupportedDtypeError(f"unsupported dtype {self.dtype!r} (only 'f32')")
        if self.order not in _ORDERS:
            raise UnsupportedDtypeError(f"unsupported byte order {self.order!r}")
        if self.interleave not in _INTERLEAVE:
            raise UnsupportedDtypeError(f"unsupported interleave {self.interleave!r}")
        if self.wavelengths is not None and len(self.wavelengths) != self.bands:
            raise CubeSizeMismatchError("wavelength list length differs from band count")

    @property
    def size(self) -> int:
        return self.width * self.height * self.bands

    def to_dict(self) -> dict:
        d = {
            "width": self.width,
            "height": self.height,
            "bands": self.bands,
            "dtype": self.dtype,
            "order": self.order,
            "interleave": self.interleave,
        }
        if self.wavelengths is not None:
            d["wavelengths"] = [float(w) for w in self.wavelengths]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CubeHeader":
        try:
            return cls(
                width=int(d["width"]),
                height=int(d["height"]),
                bands=int(d["bands"]),
                dtype=d.get("dtype", "f32"),
                order=d.get("order", "little"),
                interleave=d.get("interleave", "bsq"),
                wavelengths=d.get("wavelengths"),
            )
        except KeyError as e:
            raise CubeError(f"header missing field {e.args[0]!r}") from None


@dataclass(frozen=True, eq=False)
class HsiCube:
    """Immutable (height, width, bands) float32 cube."""

    data: np.ndarray
    normalized: bool = False
    wavelengths: Optional[tuple] = field(default=None)

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float32, copy=True)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ValueError(f"cube data must be a non-empty 3-D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("cube contains non-finite values")
        if self.normalized and (arr.min() < 0.0 or arr.max() > 1.0):
            raise ValueError("cube flagged normalized but has values outside [0, 1]")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        if self.wavelengths is not None:
            object.__setattr__(self, "wavelengths", tuple(float(w) for w in self.wavelengths))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def bands(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def n(self) -> int:
        return self.data.size

    def header(self) -> CubeHeader:
        return CubeHeader(self.width, self.height, self.bands, wavelengths=self.wavelengths)

    def with_data(self, data: np.ndarray, normalized: bool = False) -> "HsiCube":
        return HsiCube(data, normalized=normalized, wavelengths=self.wavelengths)

    def crop(self, rows=None, cols=None, bands=None) -> "HsiCube":
        """Spatial/spectral sub-cube. ``rows``/``cols`` are (start, stop); ``bands`` a
        (start, stop) pair or an explicit index list. Raises if out of bounds."""
        r0, r1 = rows if rows is not None else (0, self.height)
        c0, c1 = cols if cols is not None else (0, self.width)
        if not (0 <= r0 < r1 <= self.height and 0 <= c0 < c1 <= self.width):
            raise ValueError(f"crop rows={rows} cols={cols} outside {self.height}x{self.width}")
        if bands is None:
            idx = np.arange(self.bands)
        elif len(bands) == 2 and not isinstance(bands, list):
            b0, b1 = bands
            if not 0 <= b0 < b1 <= self.bands:
                raise ValueError(f"band range {bands} outside 0..{self.bands}")
            idx = np.arange(b0, b1)
        else:
            idx = np.asarray(bands, dtype=int)
            if idx.size == 0 or idx.min() < 0 or idx.max() >= self.bands:
                raise ValueError(f"band indices {bands} outside 0..{self.bands - 1}")
        wl = None if self.wavelengths is None else [self.wavelengths[i] for i in idx]
        return HsiCube(self.data[r0:r1, c0:c1][:, :, idx], normalized=self.normalized, wavelengths=wl)


def evenly_spaced_bands(total: int, count: int) -> list[int]:
    """``count`` band indices spread evenly over ``range(total)``."""
    if not 1 <= count <= total:
        raise ValueError(f"cannot pick {count} bands out of {total}")
    return [int(round(v)) for v in np.linspace(0, total - 1, count)]


def _paths(path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix in (".json", ".raw"):
        p = p.with_suffix("")
    return p.with_suffix(".json"), p.with_suffix(".raw")


def load_cube(path) -> HsiCube:
    """Read a header+raw cube. ``path`` may name the .json, the .raw or the stem."""
    hdr_path, raw_path = _paths(path)
    for p in (hdr_path, raw_path):
        if not p.exists():
            raise CubeNotFoundError(f"cube file not found: {p}")
    header = CubeHeader.from_dict(json.loads(hdr_path.read_text()))
    dt = np.dtype(_DTYPES[header.dtype]).newbyteorder(_ORDERS[header.order])
    payload = np.fromfile(raw_path, dtype=dt)
    if payload.size != header.size or raw_path.stat().st_size != header.size * dt.itemsize:
        raise CubeSizeMismatchError(
            f"header claims {header.height}x{header.width}x{header.bands}={header.size} samples, "
            f"payload holds {raw_path.stat().st_size / dt.itemsize:g}"
        )
    dims = {"row": header.height, "col": header.width, "band": header.bands}
    axes = _INTERLEAVE[header.interleave]
    arr = payload.reshape([dims[a] for a in axes])
    arr = arr.transpose([axes.index(a) for a in ("row", "col", "band")])
    return HsiCube(arr.astype(np.float32), wavelengths=header.wavelengths)


def save_cube(cube: HsiCube, path, interleave: str = "bsq") -> Path:
    """Write ``cube`` as ``<stem>.json`` + ``<stem>.raw`` (little-endian f32)."""
    hdr_path, raw_path = _paths(path)
    hdr_path.parent.mkdir(parents=True, exist_ok=True)
    header = CubeHeader(cube.width, cube.height, cube.bands, interleave=interleave, wavelengths=cube.wavelengths)
    axes = _INTERLEAVE[interleave]
    order = [("row", "col", "band").index(a) for a in axes]
    cube.data.transpose(order).astype("<f4").tofile(raw_path)
    hdr_path.write_text(json.dumps(header.to_dict(), indent=2))
    return hdr_path


def normalize(cube: HsiCube) -> HsiCube:
    """Global min-max scaling to [0, 1]; a constant cube maps to zeros."""
    data = cube.data.astype(np.float64)
    lo, hi = data.min(), data.max()
    if hi == lo:
        out = np.zeros_like(data)
    else:
        out = (data - lo) / (hi - lo)
    out = np.clip(out.astype(np.float32), 0.0, 1.0)
    return cube.with_data(out, normalized=True)


def vectorize(cube: HsiCube) -> np.ndarray:
    return cube.data.reshape(-1).copy()


def devectorize(flat: np.ndarray, header: CubeHeader) -> HsiCube:
    flat = np.asarray(flat)
    if flat.ndim != 1 or flat.size != header.size:
        raise CubeSizeMismatchError(f"flat length {flat.size} != {header.height}*{header.width}*{header.bands}")
    return HsiCube(flat.reshape(header.height, header.width, header.bands), wavelengths=header.wavelengths)


def convert(src, dst, key: Optional[str] = None) -> HsiCube:
    """Convert a raster file into the native format.

    Accepted inputs: native cubes, ``.npy``, MATLAB ``.mat`` (``key`` selects
    the variable, otherwise the largest 3-D array) and multi-page TIFF stored
    band-first (as the DC Mall distribution is).
    """
    src = Path(src)
    suffix = src.suffix.lower()
    if suffix in (".json", ".raw", ""):
        cube = load_cube(src)
    elif suffix == ".npy":
        cube = HsiCube(np.load(src))
    elif suffix == ".mat":
        from scipy.io import loadmat

        mat = loadmat(src)
        if key is None:
            cands = [k for k, v in mat.items() if isinstance(v, np.ndarray) and v.ndim == 3]
            if not cands:
                raise CubeError(f"no 3-D array in {src}")
            key = max(cands, key=lambda k: mat[k].size)
        cube = HsiCube(np.asarray(mat[key], dtype=np.float32))
    elif suffix in (".tif", ".tiff"):
        import tifffile

        arr = tifffile.imread(src)
        # band-first if the smallest axis is leading
        if arr.ndim == 3 and arr.shape[0] < min(arr.shape[1:]):
            arr = arr.transpose(1, 2, 0)
        cube = HsiCube(np.asarray(arr, dtype=np.float32))
    else:
        raise UnsupportedDtypeError(f"don't know how to read {src.suffix!r} files")
    save_cube(cube, dst)
    return cube

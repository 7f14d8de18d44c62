"""Encoder-decoder skip network used as the untrained image prior.

Spectral bands are treated as channels of a 2-D convolutional network. The
layout follows the usual DIP "skip" architecture: strided-conv encoder,
bilinear-upsampling decoder and thin 1x1 skip branches concatenated at every
decoder scale.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .cube import HsiCube

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NetworkConfig:
    depth: int = 5
    channels_down: Sequence[int] = (128,) * 5
    channels_up: Sequence[int] = (128,) * 5
    channels_skip: Sequence[int] = (4,) * 5
    kernel_size: int = 3
    negative_slope: float = 0.2
    upsample: str = "bilinear"
    output: str = "sigmoid"
    norm: bool = True
    pad_to_multiple: bool = True

    def __post_init__(self):
        # scalar widths are broadcast to every scale
        for name in ("channels_down", "channels_up", "channels_skip"):
            val = getattr(self, name)
            if isinstance(val, int):
                object.__setattr__(self, name, (val,) * self.depth)
            else:
                object.__setattr__(self, name, tuple(int(v) for v in val))
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        for name in ("channels_down", "channels_up", "channels_skip"):
            if len(getattr(self, name)) != self.depth:
                raise ValueError(f"{name} must have one entry per scale ({self.depth})")
        if any(c < 1 for c in self.channels_down + self.channels_up):
            raise ValueError("channel widths must be positive")
        if any(c < 0 for c in self.channels_skip):
            raise ValueError("skip widths must be non-negative")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be an odd positive integer")
        if self.upsample not in ("bilinear", "nearest"):
            raise ValueError(f"unknown upsample mode {self.upsample!r}")
        if self.output not in ("sigmoid", "none"):
            raise ValueError(f"unknown output squashing {self.output!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("channels_down", "channels_up", "channels_skip"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(**d)


def _conv(cin: int, cout: int, k: int, stride: int = 1) -> nn.Module:
    pad = (k - 1) // 2
    layers: list[nn.Module] = []
    if pad:
        layers.append(nn.ReflectionPad2d(pad))
    layers.append(nn.Conv2d(cin, cout, k, stride=stride, padding=0))
    return nn.Sequential(*layers)


def _block(cin: int, cout: int, k: int, stride: int, cfg: NetworkConfig) -> nn.Sequential:
    layers = [_conv(cin, cout, k, stride)]
    if cfg.norm:
        # batch statistics of the single image; no running buffers so the
        # forward pass is a pure function of (theta, z)
        layers.append(nn.BatchNorm2d(cout, track_running_stats=False))
    layers.append(nn.LeakyReLU(cfg.negative_slope))
    return nn.Sequential(*layers)


class _Scale(nn.Module):
    """One encoder/decoder level; ``inner`` is the next-coarser level or None."""

    def __init__(self, cin: int, level: int, cfg: NetworkConfig, inner: nn.Module | None):
        super().__init__()
        k = cfg.kernel_size
        cd, cu, cs = cfg.channels_down[level], cfg.channels_up[level], cfg.channels_skip[level]
        self.skip = _block(cin, cs, 1, 1, cfg) if cs > 0 else None
        self.down = nn.Sequential(_block(cin, cd, k, 2, cfg), _block(cd, cd, k, 1, cfg))
        self.inner = inner
        deeper = cfg.channels_up[level + 1] if level + 1 < cfg.depth else cd
        if cfg.upsample == "bilinear":
            self.up = nn.Upsample(scale_factor=2, mode="bilinear", align_corners=False)
        else:
            self.up = nn.Upsample(scale_factor=2, mode="nearest")
        merged = cs + deeper
        bn = [nn.BatchNorm2d(merged, track_running_stats=False)] if cfg.norm else []
        self.merge = nn.Sequential(
            *bn,
            _block(merged, cu, k, 1, cfg),
            _block(cu, cu, 1, 1, cfg),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.down(x)
        if self.inner is not None:
            h = self.inner(h)
        h = self.up(h)
        if self.skip is not None:
            h = torch.cat([self.skip(x), h], dim=1)
        return self.merge(h)


class DhipModel(nn.Module):
    """Skip network mapping a (1, bands, H, W) tensor to the same shape.

    Inputs whose spatial size is not a multiple of ``2**depth`` are padded
    before the network and cropped afterwards when ``config.pad_to_multiple``
    is set (reflection, or edge replication when the pad exceeds the input).
    """

    def __init__(self, config: NetworkConfig, shape: tuple[int, int, int]):
        super().__init__()
        self.config = config
        self.shape = tuple(int(s) for s in shape)
        h, w, b = self.shape
        mult = 2 ** config.depth
        if not config.pad_to_multiple and (h % mult or w % mult or min(h, w) < 2 * mult):
            raise ValueError(
                f"spatial shape {h}x{w} must be a multiple of 2**depth={mult} with a bottleneck of at "
                "least 2x2 when padding is disabled"
            )
        # the coarsest scale must stay at least 2x2 for normalization and reflection
        th = max(-(-h // mult) * mult, 2 * mult)
        tw = max(-(-w // mult) * mult, 2 * mult)
        self._pad = (0, tw - w, 0, th - h)
        if any(self._pad) and (h < 2 or w < 2):
            raise ValueError("image too small to pad")
        # reflection cannot pad by more than the input size; fall back to edge replication
        self._pad_mode = "reflect" if tw - w < w and th - h < h else "replicate"
        inner = None
        for level in reversed(range(config.depth)):
            cin = b if level == 0 else config.channels_down[level - 1]
            inner = _Scale(cin, level, config, inner)
        self.body = inner
        self.head = nn.Conv2d(config.channels_up[0], b, 1)

    @property
    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        h, w, b = self.shape
        if tuple(z.shape[-3:]) != (b, h, w):
            raise ValueError(f"input shape {tuple(z.shape)} does not match model shape (1, {b}, {h}, {w})")
        squeeze = z.dim() == 3
        if squeeze:
            z = z.unsqueeze(0)
        if any(self._pad):
            z = nn.functional.pad(z, self._pad, mode=self._pad_mode)
        out = self.head(self.body(z))
        if any(self._pad):
            out = out[..., :h, :w]
        if self.config.output == "sigmoid":
            out = torch.sigmoid(out)
        return out.squeeze(0) if squeeze else out


def build_model(config: NetworkConfig, shape: tuple[int, int, int], seed: int = 0) -> DhipModel:
    """Construct a model for cubes of ``shape`` = (height, width, bands).

    Parameter initialisation draws from a private generator so the same seed
    always yields the same weights, independent of global RNG state.
    """
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(int(seed))
        model = DhipModel(config, shape)
    log.info("built DHIP model: %d parameters, shape=%s", model.num_parameters, shape)
    return model


def save_checkpoint(model: DhipModel, path) -> None:
    """Single-file snapshot: weights plus the config and shape needed to rebuild."""
    torch.save({"config": model.config.to_dict(), "shape": list(model.shape),
                "state": model.state_dict()}, path)


def load_checkpoint(path) -> DhipModel:
    blob = torch.load(path, map_location="cpu", weights_only=True)
    model = DhipModel(NetworkConfig.from_dict(blob["config"]), tuple(blob["shape"]))
    model.load_state_dict(blob["state"])
    return model


def cube_to_tensor(cube: HsiCube | np.ndarray, dtype=torch.float32) -> torch.Tensor:
    """(H, W, B) array -> (1, B, H, W) tensor."""
    data = cube.data if isinstance(cube, HsiCube) else np.asarray(cube)
    return torch.from_numpy(np.array(data.transpose(2, 0, 1), copy=True, order="C")).to(dtype).unsqueeze(0)


def tensor_to_array(t: torch.Tensor) -> np.ndarray:
    """(1, B, H, W) or (B, H, W) tensor -> (H, W, B) float32 array."""
    t = t.detach()
    if t.dim() == 4:
        t = t[0]
    return np.ascontiguousarray(t.cpu().numpy().transpose(1, 2, 0)).astype(np.float32)


def forward(model: DhipModel, z: HsiCube | torch.Tensor) -> torch.Tensor:
    """Run the network on a cube (or a prepared tensor); result stays differentiable."""
    if isinstance(z, HsiCube):
        p = next(model.parameters())
        z = cube_to_tensor(z, dtype=p.dtype)
    return model(z)


__all__ = [
    "NetworkConfig",
    "DhipModel",
    "build_model",
    "save_checkpoint",
    "load_checkpoint",
    "forward",
    "cube_to_tensor",
    "tensor_to_array",
]

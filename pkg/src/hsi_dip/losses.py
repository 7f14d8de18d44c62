"""Training objectives: l2, SURE, Smooth-l1 and Smooth-l1 + divergence.

All data terms are means over the n elements so that the divergence weight
``2 sigma^2 / n`` puts both terms on a per-element scale.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Callable, Optional, Union

import torch

DEFAULT_BETA = 1e-3
DEFAULT_EPSILON = 1e-3

Seed = Union[int, torch.Generator, None]


class LossKind(str, enum.Enum):
    L2 = "l2"
    SURE = "sure"
    SMOOTH_L1 = "smooth_l1"
    UNIFIED = "unified"


@dataclass(frozen=True)
class LossMode:
    """Objective selector plus its parameters.

    ``sigma`` may be left as None in configs and filled in at run time from
    ``sigma_source`` ("estimate" = wavelet MAD on y, "oracle" = true Gaussian
    sigma of the synthetic corruption).
    """

    kind: LossKind = LossKind.UNIFIED
    beta: float = DEFAULT_BETA
    epsilon: float = DEFAULT_EPSILON
    sigma: Optional[float] = None
    sigma_source: str = "estimate"

    def __post_init__(self):
        object.__setattr__(self, "kind", LossKind(self.kind))
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.sigma is not None:
            if self.sigma < 0:
                raise ValueError("sigma must be non-negative")
            if self.needs_sigma and self.sigma == 0:
                raise ValueError(f"{self.kind.value} loss requires sigma > 0")
        if self.sigma_source not in ("estimate", "oracle"):
            raise ValueError(f"unknown sigma_source {self.sigma_source!r}")

    @property
    def needs_sigma(self) -> bool:
        return self.kind in (LossKind.SURE, LossKind.UNIFIED)

    def with_sigma(self, sigma: float) -> "LossMode":
        return replace(self, sigma=float(sigma))

    def to_dict(self) -> dict:
        return {"loss": self.kind.value, "beta": self.beta, "epsilon": self.epsilon,
                "sigma": self.sigma, "sigma_source": self.sigma_source}

    @classmethod
    def from_dict(cls, d: dict) -> "LossMode":
        d = dict(d)
        kind = d.pop("loss", d.pop("kind", LossKind.UNIFIED))
        return cls(kind=kind, **d)


def _check_pair(pred: torch.Tensor, target: torch.Tensor):
    if pred.numel() != target.numel():
        raise ValueError(f"length mismatch: {pred.numel()} vs {target.numel()}")


def l2_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """(1/n) ||pred - target||^2"""
    _check_pair(pred, target)
    return torch.mean((pred.reshape(-1) - target.reshape(-1)) ** 2)


def smooth_l1_elementwise(d: torch.Tensor, beta: float) -> torch.Tensor:
    if beta <= 0:
        raise ValueError("beta must be positive")
    a = d.abs()
    return torch.where(a <= beta, d * d / (2.0 * beta), a - beta / 2.0)


def smooth_l1(pred: torch.Tensor, target: torch.Tensor, beta: float = DEFAULT_BETA) -> torch.Tensor:
    """Mean Moreau envelope of |.|: quadratic within beta of zero, linear outside."""
    _check_pair(pred, target)
    return smooth_l1_elementwise(pred.reshape(-1) - target.reshape(-1), beta).mean()


def _generator(seed: Seed, device=None) -> Optional[torch.Generator]:
    if isinstance(seed, torch.Generator) or seed is None:
        return seed
    g = torch.Generator(device=device or "cpu")
    g.manual_seed(int(seed) % 2**63)
    return g


def mc_divergence(model: Callable[[torch.Tensor], torch.Tensor], z: torch.Tensor,
                  epsilon: float = DEFAULT_EPSILON, seed: Seed = None,
                  fz: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Monte Carlo divergence b^T (f(z + eps b) - f(z)) / eps with b ~ N(0, I).

    Both forward passes stay in the graph, so the estimate is differentiable
    in the model parameters and in ``z``. ``fz`` may carry an already computed
    f(z) to save one forward pass. An integer seed fixes b; a Generator is
    advanced, giving a fresh probe per call.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    b = torch.randn(z.shape, generator=_generator(seed), dtype=z.dtype, device=z.device)
    if fz is None:
        fz = model(z)
    fzb = model(z + epsilon * b)
    return torch.sum(b * (fzb - fz)) / epsilon


def sure_loss(model, y: torch.Tensor, sigma: float, epsilon: float = DEFAULT_EPSILON,
              seed: Seed = None, z: Optional[torch.Tensor] = None) -> torch.Tensor:
    """(1/n)||y - f(y)||^2 - sigma^2 + (2 sigma^2 / n) div f(y).

    The network input defaults to ``y``; ``z`` is accepted only for the
    input-optimisation ablation, in which case the divergence is taken at ``z``.
    """
    if sigma <= 0:
        raise ValueError("SURE requires sigma > 0")
    inp = y if z is None else z
    n = y.numel()
    f = model(inp)
    div = mc_divergence(model, inp, epsilon, seed, fz=f)
    return l2_loss(f, y) - sigma**2 + (2.0 * sigma**2 / n) * div


def unified_loss(model, z: torch.Tensor, y: torch.Tensor, sigma: float, beta: float = DEFAULT_BETA,
                 epsilon: float = DEFAULT_EPSILON, seed: Seed = None) -> torch.Tensor:
    """smooth_l1(f(z), y) + (2 sigma^2 / n) div_z f(z)."""
    if sigma <= 0:
        raise ValueError("unified loss requires sigma > 0")
    n = y.numel()
    f = model(z)
    div = mc_divergence(model, z, epsilon, seed, fz=f)
    return smooth_l1(f, y, beta) + (2.0 * sigma**2 / n) * div


def evaluate_loss(model, z: torch.Tensor, y: torch.Tensor, mode: LossMode, seed: Seed = None) -> torch.Tensor:
    """Dispatch on ``mode.kind``; the caller decides what ``z`` is."""
    kind = mode.kind
    if kind is LossKind.L2:
        return l2_loss(model(z), y)
    if kind is LossKind.SMOOTH_L1:
        return smooth_l1(model(z), y, mode.beta)
    if mode.sigma is None:
        raise ValueError(f"{kind.value} loss needs sigma; resolve it before training")
    if kind is LossKind.SURE:
        return sure_loss(model, y, mode.sigma, mode.epsilon, seed, z=None if z is y else z)
    return unified_loss(model, z, y, mode.sigma, mode.beta, mode.epsilon, seed)

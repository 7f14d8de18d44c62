"""Optimisation loop over the network weights and, optionally, its input."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from . import metrics
from .cube import HsiCube
from .losses import LossKind, LossMode, evaluate_loss
from .network import DhipModel, cube_to_tensor, save_checkpoint, tensor_to_array

log = logging.getLogger(__name__)

INPUT_INITS = ("noisy_y", "gaussian")


class TrainingDivergedError(RuntimeError):
    def __init__(self, iteration: int, loss: float):
        super().__init__(f"non-finite loss {loss} at iteration {iteration}")
        self.iteration = iteration
        self.loss = loss


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 4000
    learning_rate_theta: float = 0.01
    learning_rate_z: float = 0.01
    optimize_input: bool = True
    eval_every: int = 10
    seed: int = 0
    loss: LossMode = field(default_factory=LossMode)
    input_init: str = "noisy_y"
    input_noise_std: float = 0.1
    checkpoint_every: int = 0

    def __post_init__(self):
        if isinstance(self.loss, dict):
            object.__setattr__(self, "loss", LossMode.from_dict(self.loss))
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.eval_every < 1:
            raise ValueError("eval_every must be positive")
        if self.iterations and self.eval_every > self.iterations:
            raise ValueError("eval_every must not exceed iterations")
        if self.learning_rate_theta <= 0 or self.learning_rate_z <= 0:
            raise ValueError("learning rates must be positive")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be non-negative")
        if self.input_init not in INPUT_INITS:
            raise ValueError(f"input_init must be one of {INPUT_INITS}")
        if self.loss.kind is LossKind.UNIFIED and not self.optimize_input:
            # allowed for the fixed-input ablation, but it is not the proposed method
            log.warning("unified loss with a fixed input: ablation setting")

    @property
    def input_is_pinned(self) -> bool:
        """SURE without input optimisation evaluates the network at y itself."""
        return self.loss.kind is LossKind.SURE and not self.optimize_input

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss"] = self.loss.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "loss" in d:
            d["loss"] = LossMode.from_dict(d["loss"])
        return cls(**d)


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    loss: float
    mpsnr: Optional[float] = None
    mssim: Optional[float] = None
    nmse: Optional[float] = None


@dataclass
class TrainingTrace:
    records: list[TraceRecord] = field(default_factory=list)
    seconds: float = 0.0

    def append(self, rec: TraceRecord):
        if self.records and rec.iteration <= self.records[-1].iteration:
            raise ValueError("trace iterations must be strictly increasing")
        self.records.append(rec)

    @property
    def final(self) -> Optional[TraceRecord]:
        return self.records[-1] if self.records else None

    @property
    def peak(self) -> Optional[TraceRecord]:
        scored = [r for r in self.records if r.mpsnr is not None]
        return max(scored, key=lambda r: r.mpsnr) if scored else None

    @property
    def peak_drop(self) -> Optional[float]:
        """Peak minus final MPSNR in dB (None without a reference)."""
        if self.peak is None or self.final.mpsnr is None:
            return None
        return self.peak.mpsnr - self.final.mpsnr

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "loss", "mpsnr", "mssim", "nmse"])
            for r in self.records:
                w.writerow([r.iteration, repr(r.loss)] + ["" if v is None else repr(v) for v in (r.mpsnr, r.mssim, r.nmse)])
        return path

    @classmethod
    def from_csv(cls, path) -> "TrainingTrace":
        trace = cls()
        with Path(path).open() as fh:
            for row in csv.DictReader(fh):
                opt = {k: (float(row[k]) if row[k] != "" else None) for k in ("mpsnr", "mssim", "nmse")}
                trace.append(TraceRecord(int(row["iteration"]), float(row["loss"]), **opt))
        return trace


def step_seed(run_seed: int, iteration: int) -> int:
    """Probe-vector seed for one iteration, derived from (run seed, iteration).

    Iterations count from 1; slot 0 seeds the random input initialisation.
    """
    return int(np.random.SeedSequence([int(run_seed), int(iteration)]).generate_state(2, np.uint64)[0] >> 1)


def run_loss_step(model: DhipModel, z: torch.Tensor, y: torch.Tensor, mode: LossMode, step_seed: int,
                  pinned: bool = False) -> tuple[float, dict]:
    """Evaluate the loss and backpropagate.

    Returns the loss value and the gradients ``{"theta": [...], "z": tensor | None}``.
    With ``pinned`` (SURE's default) the network input is ``y`` and ``z`` is
    ignored, so no input gradient is produced.
    """
    model.zero_grad(set_to_none=True)
    if z.grad is not None:
        z.grad = None
    inp = y if pinned else z
    loss = evaluate_loss(model, inp, y, mode, seed=step_seed)
    loss.backward()
    grads = {
        "theta": [p.grad for p in model.parameters()],
        "z": None if pinned or not z.requires_grad else z.grad,
    }
    return float(loss.detach()), grads


def _initial_input(y: torch.Tensor, cfg: TrainConfig) -> torch.Tensor:
    if cfg.input_init == "noisy_y" or cfg.input_is_pinned:
        return y.detach().clone()
    g = torch.Generator().manual_seed(step_seed(cfg.seed, 0))
    return torch.randn(y.shape, generator=g, dtype=y.dtype) * cfg.input_noise_std


def train(model: DhipModel, y: HsiCube, cfg: TrainConfig, reference: Optional[HsiCube] = None,
          progress: bool = False, checkpoint_dir=None) -> tuple[HsiCube, TrainingTrace]:
    """Fit ``model`` to the noisy cube ``y`` for ``cfg.iterations`` Adam steps.

    No early stopping: the returned estimate is the output after the last
    step. When ``reference`` is given, MPSNR/MSSIM/NMSE are traced every
    ``cfg.eval_every`` iterations and at the final one.
    """
    if tuple(y.shape) != model.shape:
        raise ValueError(f"cube shape {y.shape} != model shape {model.shape}")
    if reference is not None and reference.shape != y.shape:
        raise ValueError("reference shape differs from y")
    mode = cfg.loss
    if mode.needs_sigma and mode.sigma is None:
        raise ValueError(f"{mode.kind.value} loss needs sigma")
    dtype = next(model.parameters()).dtype
    y_t = cube_to_tensor(y, dtype=dtype)
    z = _initial_input(y_t, cfg)
    pinned = cfg.input_is_pinned
    groups = [{"params": list(model.parameters()), "lr": cfg.learning_rate_theta}]
    if cfg.optimize_input and not pinned:
        z.requires_grad_(True)
        groups.append({"params": [z], "lr": cfg.learning_rate_z})
    opt = torch.optim.Adam(groups)
    trace = TrainingTrace()
    model.train()
    t0 = time.perf_counter()
    for it in range(1, cfg.iterations + 1):
        loss, _ = run_loss_step(model, z, y_t, mode, step_seed(cfg.seed, it), pinned=pinned)
        if not np.isfinite(loss):
            raise TrainingDivergedError(it, loss)
        opt.step()
        if it % cfg.eval_every == 0 or it == cfg.iterations:
            rec = TraceRecord(it, loss)
            if reference is not None:
                with torch.no_grad():
                    est = tensor_to_array(model(y_t if pinned else z))
                rep = metrics.evaluate(reference, est)
                rec = replace(rec, mpsnr=rep.mpsnr, mssim=rep.mssim, nmse=rep.nmse)
            trace.append(rec)
            if progress and it % (cfg.eval_every * 10) == 0:
                log.info("iter %5d loss %.6g mpsnr %s", it, loss, rec.mpsnr)
        if checkpoint_dir is not None and cfg.checkpoint_every and it % cfg.checkpoint_every == 0:
            Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
            save_checkpoint(model, Path(checkpoint_dir) / f"iter_{it:06d}.pt")
    trace.seconds = time.perf_counter() - t0
    with torch.no_grad():
        out = tensor_to_array(model(y_t if pinned else z))
    if not np.all(np.isfinite(out)):
        raise TrainingDivergedError(cfg.iterations, float("nan"))
    return HsiCube(out, wavelengths=y.wavelengths), trace

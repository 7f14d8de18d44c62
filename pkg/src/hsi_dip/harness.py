"""Scenario runner, results tables and figure rendering.

A scenario is one (dataset crop, noise spec) pair trained under several
methods for several seeds. Everything needed to replay it lives in the
``manifest.json`` written next to the results.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import platform
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from . import __version__, metrics
from .cube import HsiCube, evenly_spaced_bands, load_cube, normalize, save_cube
from .losses import LossKind, LossMode
from .network import NetworkConfig, build_model
from .noise import NoiseSpec, apply_spec
from .scenes import synthetic_scene
from .sigma import estimate_sigma
from .trainer import TrainConfig, TrainingTrace, train

log = logging.getLogger(__name__)

DATA_ROOT_ENV = "HSI_DATA_ROOT"

# Narrower variant of the default backbone for 64x64x16 crops on a CPU. About
# 0.6 parameters per voxel, the same order as the full-width net on a
# 200x200x191 cube (about 0.3).
DESK_NETWORK = NetworkConfig(channels_down=16, channels_up=16, channels_skip=4)

# 1-based band triples for false-color composites, keyed by full band count
FALSE_COLOR_BANDS = {191: (56, 26, 16), 204: (29, 19, 9)}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MethodSpec:
    """One column of the results table: a loss mode on the shared backbone."""

    name: str
    loss: LossMode
    optimize_input: bool = False
    input_init: str = "noisy_y"

    def to_dict(self) -> dict:
        return {"name": self.name, "loss": self.loss.to_dict(), "optimize_input": self.optimize_input,
                "input_init": self.input_init}

    @classmethod
    def from_dict(cls, d: dict) -> "MethodSpec":
        d = dict(d)
        d["loss"] = LossMode.from_dict(d["loss"])
        return cls(**d)


def default_methods(sigma_source: str = "estimate") -> list[MethodSpec]:
    return [
        MethodSpec("L2-DHIP", LossMode(kind=LossKind.L2), False, "gaussian"),
        MethodSpec("SURE-DHIP", LossMode(kind=LossKind.SURE, sigma_source=sigma_source), False, "noisy_y"),
        MethodSpec("HLF-DHIP", LossMode(kind=LossKind.SMOOTH_L1), False, "noisy_y"),
        MethodSpec("Proposed", LossMode(kind=LossKind.UNIFIED, sigma_source=sigma_source), True, "noisy_y"),
    ]


@dataclass(frozen=True)
class Crop:
    rows: Optional[tuple] = None
    cols: Optional[tuple] = None
    bands: Optional[tuple] = None  # explicit 0-based indices
    band_count: Optional[int] = None  # evenly spaced selection

    def band_indices(self, total: int) -> list[int]:
        if self.bands is not None:
            return [int(b) for b in self.bands]
        if self.band_count is not None:
            return evenly_spaced_bands(total, self.band_count)
        return list(range(total))

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> "Crop":
        d = dict(d or {})
        for k in ("rows", "cols", "bands"):
            if d.get(k) is not None:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    dataset: str
    noise: NoiseSpec
    train: TrainConfig = field(default_factory=TrainConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    methods: Sequence[MethodSpec] = field(default_factory=default_methods)
    crop: Crop = field(default_factory=Crop)
    seeds: Sequence[int] = (0,)
    output_dir: str = "runs"
    torch_threads: int = 1

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if not self.methods:
            raise ConfigError("at least one method is required")
        names = [m.name for m in self.methods]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate method names: {names}")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "methods", tuple(self.methods))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "dataset": self.dataset,
            "crop": self.crop.to_dict(),
            "noise": self.noise.to_dict(),
            "train": self.train.to_dict(),
            "network": self.network.to_dict(),
            "methods": [m.to_dict() for m in self.methods],
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
            "torch_threads": self.torch_threads,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        try:
            train_d = dict(d.get("train", {}))
            methods = d.get("methods")
            return cls(
                name=d["name"],
                dataset=d["dataset"],
                crop=Crop.from_dict(d.get("crop")),
                noise=NoiseSpec.from_dict(d["noise"]),
                train=TrainConfig.from_dict(train_d),
                network=NetworkConfig.from_dict(d.get("network", {})),
                methods=[MethodSpec.from_dict(m) for m in methods] if methods else default_methods(),
                seeds=d.get("seeds", [0]),
                output_dir=d.get("output_dir", "runs"),
                torch_threads=d.get("torch_threads", 1),
            )
        except (KeyError, TypeError) as e:
            raise ConfigError(f"invalid scenario config: {e}") from e

    @classmethod
    def from_json(cls, path) -> "ScenarioConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def method_config(self, method: MethodSpec, seed: int) -> TrainConfig:
        return replace(self.train, loss=method.loss, optimize_input=method.optimize_input,
                       input_init=method.input_init, seed=seed)


def desk_config(name: str, dataset: str, noise: NoiseSpec, methods: Optional[Sequence[MethodSpec]] = None,
                seeds: Sequence[int] = (0, 1, 2), **overrides) -> ScenarioConfig:
    """Desk-scale scenario: top-left 64x64 crop, 16 evenly spaced bands, 1,500 iterations, 3 seeds."""
    kw = dict(
        name=name, dataset=dataset, noise=noise,
        crop=Crop(rows=(0, 64), cols=(0, 64), band_count=16),
        train=TrainConfig(iterations=1500, eval_every=10),
        network=DESK_NETWORK,
        methods=list(methods) if methods is not None else default_methods(),
        seeds=seeds,
    )
    kw.update(overrides)
    return ScenarioConfig(**kw)


def with_sigma_source(cfg: ScenarioConfig, source: str) -> ScenarioConfig:
    """Switch every sigma-dependent method to ``estimate`` or ``oracle`` sigma."""
    methods = [replace(m, loss=replace(m.loss, sigma_source=source)) if m.loss.needs_sigma else m
               for m in cfg.methods]
    return replace(cfg, methods=methods)


def load_dataset(spec: str) -> HsiCube:
    """``synthetic:HxWxB[:seed]`` or a cube path (relative paths resolve against $HSI_DATA_ROOT)."""
    if spec.startswith("synthetic:"):
        parts = spec.split(":")
        h, w, b = (int(v) for v in parts[1].lower().split("x"))
        seed = int(parts[2]) if len(parts) > 2 else 0
        return synthetic_scene(h, w, b, seed=seed)
    p = Path(spec)
    if not p.is_absolute() and os.environ.get(DATA_ROOT_ENV):
        p = Path(os.environ[DATA_ROOT_ENV]) / p
    return load_cube(p)


def prepare_clean(cfg: ScenarioConfig) -> tuple[HsiCube, list[int], int]:
    """Load, crop and normalize. Returns (clean cube, original band indices, original band count)."""
    full = load_dataset(cfg.dataset)
    bands = cfg.crop.band_indices(full.bands)
    try:
        cube = full.crop(cfg.crop.rows, cfg.crop.cols, list(bands))
    except ValueError as e:
        raise ConfigError(str(e)) from e
    return normalize(cube), bands, full.bands


def noise_seed(spec_seed: int, run_seed: int) -> int:
    return int(np.random.SeedSequence([int(spec_seed), int(run_seed)]).generate_state(1, np.uint64)[0])


def resolve_sigma(mode: LossMode, true_sigma: float, estimated: float) -> LossMode:
    if not mode.needs_sigma or mode.sigma is not None:
        return mode
    sigma = true_sigma if mode.sigma_source == "oracle" else estimated
    if sigma <= 0:
        raise ValueError(f"{mode.kind.value} loss needs sigma > 0 but {mode.sigma_source} sigma is {sigma}")
    return mode.with_sigma(sigma)


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2))


def _run_job(cfg_dict: dict, run_dir: str, seed: int, method_name: str) -> dict:
    """One (seed, method) training run; executed in-process or in a worker."""
    cfg = ScenarioConfig.from_dict(cfg_dict)
    torch.set_num_threads(cfg.torch_threads)
    run_dir = Path(run_dir)
    seed_dir = run_dir / f"seed_{seed}"
    method = next(m for m in cfg.methods if m.name == method_name)
    out_dir = seed_dir / method.name
    out_dir.mkdir(parents=True, exist_ok=True)
    record = {"seed": seed, "method": method.name, "dir": str(out_dir.relative_to(run_dir))}
    try:
        clean = load_cube(run_dir / "clean")
        noisy = load_cube(seed_dir / "noisy")
        sig = json.loads((seed_dir / "sigma.json").read_text())
        tcfg = cfg.method_config(method, seed)
        tcfg = replace(tcfg, loss=resolve_sigma(tcfg.loss, sig["true"], sig["pooled"]))
        model = build_model(cfg.network, noisy.shape, seed=seed)
        est, trace = train(model, noisy, tcfg, reference=clean, checkpoint_dir=out_dir / "checkpoints")
        save_cube(est, out_dir / "estimate")
        trace.to_csv(out_dir / "trace.csv")
        report = metrics.evaluate(clean, est)
        summary = {
            **report.to_dict(),
            "peak_mpsnr": trace.peak.mpsnr if trace.peak else None,
            "peak_iteration": trace.peak.iteration if trace.peak else None,
            "final_iteration": trace.final.iteration if trace.final else 0,
            "sigma_used": tcfg.loss.sigma,
            "parameters": model.num_parameters,
            "seconds": trace.seconds,
        }
        _dump(out_dir / "metrics.json", summary)
        record.update(status="ok", mpsnr=report.mpsnr, mssim=report.mssim,
                      peak_mpsnr=summary["peak_mpsnr"], seconds=trace.seconds)
    except Exception as e:  # failures are recorded, never abort the grid
        log.error("run %s/seed %d failed: %s", method.name, seed, e)
        record.update(status="failed", error=f"{type(e).__name__}: {e}", traceback=traceback.format_exc())
    return record


def run_scenario(cfg: ScenarioConfig, jobs: int = 1, out_dir=None) -> Path:
    """Corrupt, estimate sigma, train every (method, seed) pair and write a manifest.

    Config problems (bad crop, unloadable dataset, impossible noise spec) raise
    before any training starts; individual training failures are recorded in
    the manifest instead.
    """
    clean, bands, total_bands = prepare_clean(cfg)
    if cfg.noise.stripe_band_count is not None and cfg.noise.stripe_band_count > clean.bands:
        raise ConfigError(f"stripe_band_count {cfg.noise.stripe_band_count} exceeds {clean.bands} bands")
    run_dir = Path(out_dir or cfg.output_dir) / cfg.name
    run_dir.mkdir(parents=True, exist_ok=True)
    save_cube(clean, run_dir / "clean")
    noisy_info = {}
    for seed in cfg.seeds:
        seed_dir = run_dir / f"seed_{seed}"
        seed_dir.mkdir(exist_ok=True)
        spec = replace(cfg.noise, seed=noise_seed(cfg.noise.seed, seed))
        noisy, true_sigma = apply_spec(clean, spec)
        save_cube(noisy, seed_dir / "noisy")
        est = estimate_sigma(noisy)
        _dump(seed_dir / "sigma.json", {"true": true_sigma, **est.to_dict()})
        noisy_report = metrics.evaluate(clean, noisy)
        _dump(seed_dir / "noisy_metrics.json", noisy_report.to_dict())
        noisy_info[str(seed)] = {"noise_seed": spec.seed, "sigma_true": true_sigma, "sigma_estimate": est.pooled,
                                 "mpsnr": noisy_report.mpsnr, "mssim": noisy_report.mssim}

    tasks = [(seed, m.name) for seed in cfg.seeds for m in cfg.methods]
    cfg_dict = cfg.to_dict()
    started = time.time()
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_job, cfg_dict, str(run_dir), s, m) for s, m in tasks]
            records = [f.result() for f in futures]
    else:
        records = [_run_job(cfg_dict, str(run_dir), s, m) for s, m in tasks]

    manifest = {
        "config": cfg_dict,
        "band_indices": bands,
        "source_bands": total_bands,
        "noisy": noisy_info,
        "runs": records,
        "environment": {"hsi_dip": __version__, "torch": torch.__version__, "numpy": np.__version__,
                        "python": platform.python_version(), "machine": platform.machine()},
        "wall_seconds": time.time() - started,
    }
    _dump(run_dir / "manifest.json", manifest)
    return run_dir


def replay(manifest_path, out_dir) -> Path:
    """Re-run a scenario from its manifest into ``out_dir``."""
    manifest = json.loads(Path(manifest_path).read_text())
    return run_scenario(ScenarioConfig.from_dict(manifest["config"]), out_dir=out_dir)


@dataclass
class ResultsTable:
    # (scenario, snr_db, method) -> {"mpsnr", "mssim", "n", "status", "trace", "manifest"}
    cells: dict = field(default_factory=dict)
    methods: list = field(default_factory=list)

    def rows(self) -> list[tuple]:
        return sorted({(k[0], k[1]) for k in self.cells}, key=lambda r: (r[0], -np.inf if r[1] is None else r[1]))

    def best(self, scenario, snr) -> Optional[str]:
        scored = {m: c["mpsnr"] for (s, r, m), c in self.cells.items()
                  if s == scenario and r == snr and m != "Noisy" and c["status"] == "ok"}
        return max(scored, key=scored.get) if scored else None

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scenario", "snr_db", "method", "mpsnr", "mssim", "n_seeds", "status", "best",
                        "traces", "manifest"])
            for scen, snr in self.rows():
                best = self.best(scen, snr)
                for m in ["Noisy"] + self.methods:
                    c = self.cells.get((scen, snr, m))
                    if c is None:
                        continue
                    w.writerow([scen, snr, m, c["mpsnr"], c["mssim"], c["n"], c["status"], m == best,
                                ";".join(c.get("traces", [])), c.get("manifest", "")])
        return path

    def format(self) -> str:
        cols = ["Noisy"] + self.methods
        width = max(12, *(len(c) + 2 for c in cols))
        lines = ["scenario".ljust(24) + "SNR".rjust(6) + "".join(c.rjust(width) for c in cols)]
        for scen, snr in self.rows():
            best = self.best(scen, snr)
            for metric, fmt in (("mpsnr", "{:.2f}"), ("mssim", "{:.3f}")):
                head = (scen if metric == "mpsnr" else "").ljust(24)
                head += ("" if snr is None or metric != "mpsnr" else f"{snr:g}").rjust(6)
                cells = []
                for m in cols:
                    c = self.cells.get((scen, snr, m))
                    if c is None:
                        txt = "-"
                    elif c["status"] != "ok":
                        txt = "failed"
                    else:
                        txt = fmt.format(c[metric]) + ("*" if m == best else "")
                    cells.append(txt.rjust(width))
                lines.append(head + "".join(cells))
        return "\n".join(lines)


def build_tables(run_dirs: Sequence) -> ResultsTable:
    """Aggregate final-iteration metrics (mean over seeds) into one table."""
    table = ResultsTable()
    for rd in run_dirs:
        rd = Path(rd)
        mpath = rd / "manifest.json"
        try:
            manifest = json.loads(mpath.read_text())
        except (OSError, ValueError) as e:
            log.error("no readable manifest in %s: %s", rd, e)
            continue
        cfg = manifest["config"]
        scen, snr = cfg["name"], cfg["noise"].get("gaussian_snr_db")
        noisy = list(manifest["noisy"].values())
        table.cells[(scen, snr, "Noisy")] = {
            "mpsnr": float(np.mean([v["mpsnr"] for v in noisy])),
            "mssim": float(np.mean([v["mssim"] for v in noisy])),
            "n": len(noisy), "status": "ok", "manifest": str(mpath)}
        for m in [mm["name"] for mm in cfg["methods"]]:
            if m not in table.methods:
                table.methods.append(m)
            ok, traces = [], []
            for rec in manifest["runs"]:
                if rec["method"] != m:
                    continue
                mfile = rd / rec["dir"] / "metrics.json"
                if rec.get("status") == "ok" and mfile.exists():
                    ok.append(json.loads(mfile.read_text()))
                    traces.append(str(rd / rec["dir"] / "trace.csv"))
            if ok:
                cell = {"mpsnr": float(np.mean([o["mpsnr"] for o in ok])),
                        "mssim": float(np.mean([o["mssim"] for o in ok])), "n": len(ok), "status": "ok"}
            else:
                cell = {"mpsnr": None, "mssim": None, "n": 0, "status": "failed"}
            cell.update(traces=traces, manifest=str(mpath))
            table.cells[(scen, snr, m)] = cell
    return table


def false_color(cube: HsiCube, bands: Sequence[int]) -> np.ndarray:
    """(H, W, 3) image from three 0-based band indices, clamped to [0, 1]."""
    for b in bands:
        if not 0 <= b < cube.bands:
            raise IndexError(f"band {b} out of range for a {cube.bands}-band cube")
    return np.clip(cube.data[:, :, list(bands)], 0.0, 1.0)


def composite_bands(manifest: dict, requested: Optional[Sequence[int]] = None) -> list[int]:
    """Map 1-based source band numbers to indices of the (possibly band-cropped) cube."""
    source = manifest["source_bands"]
    if requested is None:
        requested = FALSE_COLOR_BANDS.get(source)
        if requested is None:
            requested = (source, (source + 1) // 2, 1) if source >= 3 else (1, 1, 1)
    kept = np.asarray(manifest["band_indices"])
    out = []
    for b in requested:
        if not 1 <= b <= source:
            raise IndexError(f"band {b} outside 1..{source}")
        out.append(int(np.argmin(np.abs(kept - (b - 1)))))
    return out


def render_outputs(run_dir, bands: Optional[Sequence[int]] = None, seed: Optional[int] = None) -> list[Path]:
    """False-color composites of clean/noisy/estimates and MPSNR/NMSE training curves (PNG)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    run_dir = Path(run_dir)
    manifest = json.loads((run_dir / "manifest.json").read_text())
    seed = manifest["config"]["seeds"][0] if seed is None else seed
    idx = composite_bands(manifest, bands)
    fig_dir = run_dir / "figures"
    fig_dir.mkdir(exist_ok=True)
    written = []

    panels = [("clean", run_dir / "clean"), ("noisy", run_dir / f"seed_{seed}" / "noisy")]
    for m in manifest["config"]["methods"]:
        panels.append((m["name"], run_dir / f"seed_{seed}" / m["name"] / "estimate"))
    for name, stem in panels:
        if not stem.with_suffix(".json").exists():
            continue
        path = fig_dir / f"{name}_seed{seed}.png"
        plt.imsave(path, false_color(load_cube(stem), idx))
        written.append(path)

    traces = {}
    for m in manifest["config"]["methods"]:
        tpath = run_dir / f"seed_{seed}" / m["name"] / "trace.csv"
        if tpath.exists():
            traces[m["name"]] = TrainingTrace.from_csv(tpath)
    for key, label in (("mpsnr", "MPSNR (dB)"), ("nmse", "NMSE")):
        fig, ax = plt.subplots(figsize=(6, 4))
        for name, tr in traces.items():
            pts = [(r.iteration, getattr(r, key)) for r in tr.records if getattr(r, key) is not None]
            if not pts:
                continue
            it, val = zip(*pts)
            ax.plot(it, val, marker="o" if len(pts) == 1 else None, label=name)
        ax.set_xlabel("iteration")
        ax.set_ylabel(label)
        if key == "nmse":
            ax.set_yscale("log")
        if traces:
            ax.legend()
        ax.set_title(manifest["config"]["name"])
        path = fig_dir / f"{key}_seed{seed}.png"
        fig.tight_layout()
        fig.savefig(path, dpi=100)
        plt.close(fig)
        written.append(path)
    return written

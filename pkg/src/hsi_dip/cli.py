"""Command line entry point: ``hsi <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness, metrics
from .cube import CubeError, convert, load_cube, save_cube
from .noise import NoiseSpec, apply_spec
from .scenes import synthetic_scene
from .sigma import estimate_sigma


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2))


def cmd_run(args) -> int:
    cfg = harness.ScenarioConfig.from_json(args.config)
    if args.sigma_source:
        cfg = harness.with_sigma_source(cfg, args.sigma_source)
    run_dir = harness.run_scenario(cfg, jobs=args.jobs, out_dir=args.out)
    manifest = json.loads((run_dir / "manifest.json").read_text())
    failed = [r for r in manifest["runs"] if r["status"] != "ok"]
    for r in manifest["runs"]:
        extra = f"{r['mpsnr']:.2f} dB" if r["status"] == "ok" else r["error"]
        print(f"seed {r['seed']:>3} {r['method']:<12} {r['status']:<7} {extra}")
    print(f"manifest: {run_dir / 'manifest.json'}")
    return 1 if failed else 0


def cmd_replay(args) -> int:
    run_dir = harness.replay(args.manifest, args.out)
    print(f"manifest: {run_dir / 'manifest.json'}")
    return 0


def cmd_tables(args) -> int:
    table = harness.build_tables(args.runs)
    print(table.format())
    if args.csv:
        table.to_csv(args.csv)
    return 0


def cmd_render(args) -> int:
    bands = tuple(args.bands) if args.bands else None
    for p in harness.render_outputs(args.run, bands=bands, seed=args.seed):
        print(p)
    return 0


def cmd_corrupt(args) -> int:
    cube = load_cube(args.inp)
    spec = NoiseSpec.from_dict(json.loads(Path(args.spec).read_text()))
    noisy, sigma = apply_spec(cube, spec)
    save_cube(noisy, args.out)
    if args.emit_sigma:
        Path(args.emit_sigma).write_text(json.dumps({"sigma": sigma}))
    print(f"gaussian sigma: {sigma:.6g}")
    return 0


def cmd_sigma(args) -> int:
    _print_json(estimate_sigma(load_cube(args.inp)).to_dict())
    return 0


def cmd_metrics(args) -> int:
    report = metrics.evaluate(load_cube(args.ref), load_cube(args.est))
    d = report.to_dict()
    if not args.per_band:
        d.pop("per_band_psnr")
        d.pop("per_band_ssim")
    _print_json(d)
    return 0


def cmd_convert(args) -> int:
    convert(args.inp, args.out, key=args.key)
    return 0


def cmd_synth(args) -> int:
    h, w, b = (int(v) for v in args.shape.lower().split("x"))
    save_cube(synthetic_scene(h, w, b, seed=args.seed), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hsi", description="Deep hyperspectral image prior denoising toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("run", help="run a scenario config (JSON)")
    s.add_argument("--config", required=True)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out", default=None, help="output root (overrides config output_dir)")
    s.add_argument("--sigma-source", choices=["estimate", "oracle"], default=None,
                   help="noise level used by SURE/UNIFIED methods (overrides the config)")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("replay", help="re-run a scenario from its manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_replay)

    s = sub.add_parser("tables", help="aggregate run directories into a results table")
    s.add_argument("--runs", nargs="+", required=True)
    s.add_argument("--csv", default=None)
    s.set_defaults(func=cmd_tables)

    s = sub.add_parser("render", help="false-color composites and training curves")
    s.add_argument("--run", required=True)
    s.add_argument("--bands", type=int, nargs=3, default=None, help="1-based source band numbers (R G B)")
    s.add_argument("--seed", type=int, default=None)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("corrupt", help="apply a noise spec (JSON) to a cube")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--emit-sigma", default=None, help="write the true Gaussian sigma to this JSON file")
    s.set_defaults(func=cmd_corrupt)

    s = sub.add_parser("sigma", help="estimate the Gaussian noise level of a cube")
    s.add_argument("--in", dest="inp", required=True)
    s.set_defaults(func=cmd_sigma)

    s = sub.add_parser("metrics", help="MPSNR / MSSIM / NMSE of an estimate")
    s.add_argument("--ref", required=True)
    s.add_argument("--est", required=True)
    s.add_argument("--per-band", action="store_true")
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("convert", help="convert .mat/.tif/.npy to the native cube format")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--key", default=None, help="variable name inside a .mat file")
    s.set_defaults(func=cmd_convert)

    s = sub.add_parser("synth", help="write a synthetic urban-like scene")
    s.add_argument("--shape", default="64x64x16", help="HxWxB")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CubeError, harness.ConfigError, ValueError, IndexError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

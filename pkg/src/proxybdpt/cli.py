"""Command-line front end.

    proxybdpt render SCENE --integrator proxy-bdpt --spp 64 --out out/img
    proxybdpt compare est.pfm ref.pfm
    proxybdpt bench smis | bench recip
    proxybdpt dump-stats SCENE --out stats.csv

SCENE is a path to a scene JSON file or the name of a shipped scene.
A JSON config file (``--config``) may hold any render option under its
flag name with dashes as underscores; flags given on the command line win.
Exit status: 0 success, 2 invalid input, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .metrics import compare, mape
from .scene import load_scene, load_shipped
from .scene.loader import SHIPPED

INTEGRATORS = ("pt", "bdpt", "proxy-bdpt")
RENDER_DEFAULTS = {
    "integrator": "proxy-bdpt",
    "spp": None,
    "time": None,
    "seed": 0,
    "out": "render",
    "reference": None,
    "convergence": None,
    "max_depth": None,
    "proxy": "on",
    "proxy_budget": 400,
    "recip_repeats": 5,
    "freeze_iter": 40,
    "dump_stats": None,
    "diagnostics": None,
}


class UsageError(ValueError):
    pass


def _scene(arg):
    if arg in SHIPPED and not Path(arg).exists():
        return load_shipped(arg)
    return load_scene(arg)


def render_config(args):
    """Merge defaults, the config file and explicit flags (in that order)."""
    cfg = dict(RENDER_DEFAULTS)
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as e:
            raise UsageError(f"{args.config}: line {e.lineno} column {e.colno}: {e.msg}") from e
        if not isinstance(data, dict):
            raise UsageError(f"{args.config}: config must be a JSON object")
        unknown = sorted(set(data) - set(RENDER_DEFAULTS) - {"scene"})
        if unknown:
            raise UsageError(f"{args.config}: unknown option(s) {', '.join(unknown)}")
        cfg.update(data)
    for k in RENDER_DEFAULTS:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    cfg["scene"] = args.scene or cfg.get("scene")
    if not cfg["scene"]:
        raise UsageError("no scene given")
    if cfg["integrator"] not in INTEGRATORS:
        raise UsageError(f"integrator must be one of {', '.join(INTEGRATORS)}")
    if cfg["proxy"] not in ("on", "off"):
        raise UsageError("--proxy takes on or off")
    if (cfg["spp"] is None) == (cfg["time"] is None):
        raise UsageError("give exactly one of --spp or --time")
    if cfg["spp"] is not None and int(cfg["spp"]) < 1:
        raise UsageError("--spp must be at least 1")
    if cfg["time"] is not None and float(cfg["time"]) <= 0:
        raise UsageError("--time must be positive")
    for k in ("proxy_budget", "recip_repeats"):
        if int(cfg[k]) < 1:
            raise UsageError(f"--{k.replace('_', '-')} must be at least 1")
    if int(cfg["freeze_iter"]) < 0:
        raise UsageError("--freeze-iter must be nonnegative")
    return cfg


def cmd_render(cfg, out=None):
    from .proxy import ProxyConfig, render_proxy_bdpt
    from .transport.imageio import read_pfm, write_pfm, write_png
    from .transport.render import render_bdpt, render_pt

    scene = _scene(cfg["scene"])
    rng = np.random.default_rng(int(cfg["seed"]))
    reference = read_pfm(cfg["reference"]) if cfg["reference"] else None
    if reference is not None and reference.shape != (scene.camera.height, scene.camera.width, 3):
        raise UsageError(f"{cfg['reference']}: reference size {reference.shape[:2]} does not match the camera")

    def on_pass(i, elapsed, acc):
        if reference is None:
            return None
        return (i, elapsed, mape(acc.mean, reference))

    spp = int(cfg["spp"]) if cfg["spp"] is not None else None
    budget = float(cfg["time"]) if cfg["time"] is not None else None
    D = cfg["max_depth"]
    if cfg["integrator"] == "pt":
        res = render_pt(scene, spp, rng, D, budget, on_pass)
    elif cfg["integrator"] == "bdpt":
        res = render_bdpt(scene, spp, rng, D, budget, on_pass)
    else:
        pc = ProxyConfig(
            enabled=cfg["proxy"] == "on",
            budget=int(cfg["proxy_budget"]),
            repeats=int(cfg["recip_repeats"]),
            freeze_iter=int(cfg["freeze_iter"]),
        )
        res = render_proxy_bdpt(scene, spp, rng, D, budget, on_pass, cfg=pc)

    prefix = Path(cfg["out"])
    prefix.parent.mkdir(parents=True, exist_ok=True)
    write_pfm(f"{prefix}.pfm", res.image)
    write_pfm(f"{prefix}.stderr.pfm", res.stderr)
    write_png(f"{prefix}.png", res.image)
    if cfg["convergence"] and res.rows:
        path = Path(cfg["convergence"])
        new = not path.exists()
        with open(path, "a", newline="") as f:
            w = csv.writer(f)
            if new:
                w.writerow(["pass", "elapsed_s", "mape"])
            w.writerows(res.rows)
    if cfg["dump_stats"] and "stats" in res.info:
        res.info["stats"].write_csv(cfg["dump_stats"])
    if cfg["diagnostics"] and "diagnostics" in res.info:
        res.info["diagnostics"].write_csv(cfg["diagnostics"])
    summary = {"spp": res.spp, "elapsed_s": round(res.elapsed, 3), "image": f"{prefix}.pfm"}
    if reference is not None:
        summary["mape"] = mape(res.image, reference)
    print(json.dumps(summary), file=out or sys.stdout)
    return res


def cmd_compare(estimate, reference, eps=None, out=None):
    from .transport.imageio import read_pfm

    rep = compare(read_pfm(estimate), read_pfm(reference), eps)
    print(json.dumps({"mape": rep.mape, "mse": rep.mse, "smape": rep.smape}), file=out or sys.stdout)
    return rep


def cmd_bench_smis(args, out=None):
    from .smis import BenchConfig, run_benchmark, write_rows

    if args.trials < 1000:
        raise UsageError("--trials must be at least 1000")
    if args.pdf_cost < 0:
        raise UsageError("--pdf-cost must be nonnegative")
    rows = run_benchmark(BenchConfig(trials=args.trials, seed=args.seed, pdf_cost=args.pdf_cost))
    write_rows(rows, args.out)
    print(f"wrote {len(rows)} rows to {args.out}", file=out or sys.stdout)
    return rows


def cmd_bench_recip(args, out=None):
    from .bench import run_recip_bench, write_recip_rows

    if args.trials < 10_000:
        raise UsageError("--trials must be at least 10000")
    grid = tuple(float(x) for x in args.r_grid.split(","))
    if any(r <= 0 for r in grid):
        raise UsageError("--r-grid values must be positive")
    rows = run_recip_bench(args.trials, args.seed, grid, args.b_scale)
    write_recip_rows(rows, args.out)
    print(f"wrote {len(rows)} rows to {args.out}", file=out or sys.stdout)
    return rows


def cmd_dump_stats(args, out=None):
    from .proxy import ProxyConfig
    from .subspace import pretrace_statistics

    scene = _scene(args.scene)
    cfg = ProxyConfig()
    stats = pretrace_statistics(scene, args.paths, np.random.default_rng(args.seed), cfg.mapper(scene), cfg=cfg)
    stats.write_csv(args.out)
    print(f"wrote {len(stats)} subspace rows to {args.out}", file=out or sys.stdout)
    return stats


def build_parser():
    ap = argparse.ArgumentParser(prog="proxybdpt", description="BDPT with proxy connections.")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("render", help="render a scene")
    r.add_argument("scene", nargs="?", help="scene file or shipped scene name")
    r.add_argument("--config", help="JSON file with render options")
    r.add_argument("--integrator", choices=INTEGRATORS)
    r.add_argument("--spp", type=int)
    r.add_argument("--time", type=float, help="time budget in seconds instead of --spp")
    r.add_argument("--seed", type=int)
    r.add_argument("--out", help="output prefix (writes .pfm, .stderr.pfm, .png)")
    r.add_argument("--reference", help="reference PFM for per-pass MAPE")
    r.add_argument("--convergence", help="CSV appended with per-pass MAPE rows")
    r.add_argument("--max-depth", dest="max_depth", type=int)
    r.add_argument("--proxy", choices=("on", "off"))
    r.add_argument("--proxy-budget", dest="proxy_budget", type=int)
    r.add_argument("--recip-repeats", dest="recip_repeats", type=int)
    r.add_argument("--freeze-iter", dest="freeze_iter", type=int)
    r.add_argument("--dump-stats", dest="dump_stats", help="write final subspace statistics CSV")
    r.add_argument("--diagnostics", help="write truncation/rejection rates per subspace CSV")

    c = sub.add_parser("compare", help="MAPE, MSE and SMAPE of two PFM images")
    c.add_argument("estimate")
    c.add_argument("reference")
    c.add_argument("--eps", type=float, help="denominator floor (default 1e-2 x mean reference luminance)")

    b = sub.add_parser("bench", help="estimator benchmarks")
    bs = b.add_subparsers(dest="bench", required=True)
    s = bs.add_parser("smis", help="SMIS vs reciprocal CMIS variance table")
    s.add_argument("--trials", type=int, default=200_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--pdf-cost", dest="pdf_cost", type=float, default=0.0625)
    s.add_argument("--out", default="bench_smis.csv")
    rc = bs.add_parser("recip", help="reciprocal estimator ablation")
    rc.add_argument("--trials", type=int, default=200_000)
    rc.add_argument("--seed", type=int, default=0)
    rc.add_argument("--r-grid", dest="r_grid", default="1,10,100,1000")
    rc.add_argument("--b-scale", dest="b_scale", type=float, default=1.0)
    rc.add_argument("--out", default="bench_recip.csv")

    d = sub.add_parser("dump-stats", help="pretrace a scene and write subspace statistics")
    d.add_argument("scene")
    d.add_argument("--paths", type=int, default=4096)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out", default="stats.csv")
    return ap


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        if args.command == "render":
            cmd_render(render_config(args))
        elif args.command == "compare":
            cmd_compare(args.estimate, args.reference, args.eps)
        elif args.command == "bench":
            (cmd_bench_smis if args.bench == "smis" else cmd_bench_recip)(args)
        else:
            cmd_dump_stats(args)
    except ValueError as e:
        # includes UsageError and SceneError
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (OSError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

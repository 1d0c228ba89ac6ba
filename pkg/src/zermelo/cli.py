"""Command-line entry point: ``zermelo verify|geodesic|curvature|deform``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import verify as V
from .geodesics import ChartExitError, flag_curvature, integrate_geodesic
from .metrics import finsler_eval, translated_argument
from .scenarios import ConfigError, ScenarioConfig, bundled, load

OUT_ENV = "ZERMELO_OUT"
EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def out_dir(args) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or "zermelo_out")


def _vector(text: str) -> np.ndarray:
    try:
        return np.array([float(c) for c in text.split(",")])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _rows_out(args, header, rows, stem: str) -> None:
    """Write a table as CSV or JSON to --output ('-' is stdout) or the output directory."""
    if args.format == "json":
        text = json.dumps([dict(zip(header, r)) for r in rows], indent=2) + "\n"
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows([[repr(float(c)) for c in r] for r in rows])
        text = buf.getvalue()
    if args.output == "-":
        sys.stdout.write(text)
        return
    path = Path(args.output) if args.output else out_dir(args) / f"{stem}.{args.format}"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    print(path)


def cmd_verify(cfg: ScenarioConfig, args) -> int:
    dest = out_dir(args)
    report_path = dest / f"{cfg.name}_report.{args.format}"
    curves = dest / "curves" if args.curves else None
    report = V.run(cfg, out=report_path, fmt=args.format, curves_dir=curves)
    g = report.gate
    print(f"[{'PASS' if g['passed'] else 'FAIL'}] gate: killing residual "
          f"{g['killing_residual']:.3e} (< {g['killing_tolerance']:g}), "
          f"max F(x,-v) {g['admissibility_max']:.4f} (< 1)")
    for r in report.records:
        status = "PASS" if r.passed else "FAIL"
        if r.error:
            print(f"[{status}] {r.name}: aborted: {r.error}")
            continue
        parts = ", ".join(f"{k} {v:.3e} (< {r.tolerance[k]:g})" for k, v in r.measured.items())
        print(f"[{status}] {r.name}: {parts} [{r.runtime_s:.1f}s]")
        if r.expected_fail:
            e = r.expected_fail
            print(f"       control {e['metric']}: residual {e['residual']:.3e} "
                  f"(expected > {e['threshold']:g}, {'detected' if e['detected'] else 'NOT detected'})")
    print(f"overall: {'PASS' if report.overall_pass else 'FAIL'} ({report.status}); report: {report_path}")
    return EXIT_OK if report.overall_pass else EXIT_FAIL


def cmd_geodesic(cfg: ScenarioConfig, args) -> int:
    base, wind = cfg.base_metric(), cfg.wind_field()
    x0 = args.start
    u = args.direction if args.direction is not None else np.eye(cfg.dim)[0]
    if len(x0) != cfg.dim or len(u) != cfg.dim:
        raise ConfigError([f"--start and --direction need {cfg.dim} components"])
    xi0 = u / finsler_eval(base, x0, u)
    if args.metric == "deformed":
        metric, xi0 = cfg.deformed_metric(), translated_argument(base, wind, x0, xi0)
    else:
        metric = base
    traj = integrate_geodesic(metric, x0, xi0, args.T, args.step or cfg.step)
    idx = np.arange(0, len(traj.t), max(1, args.every))
    n = cfg.dim
    header = ["t"] + [f"x_{i + 1}" for i in range(n)] + [f"xi_{i + 1}" for i in range(n)]
    rows = np.column_stack([traj.t[idx], traj.x[idx], traj.xdot[idx]])
    _rows_out(args, header, rows, f"{cfg.name}_geodesic_{args.metric}")
    return EXIT_OK


def cmd_curvature(cfg: ScenarioConfig, args) -> int:
    base, wind, deformed = cfg.base_metric(), cfg.wind_field(), cfg.deformed_metric()
    rng = np.random.default_rng(args.seed if args.seed is not None else cfg.seeds["flags"])
    x, xi, eta = V.sample_flags(cfg, base, deformed, wind, rng, args.samples,
                                cfg.params("flag_equality")["min_sine"])
    K = flag_curvature(base, x, xi, eta)
    Kt = flag_curvature(deformed, x, translated_argument(base, wind, x, xi), eta)
    n = cfg.dim
    header = ([f"x_{i + 1}" for i in range(n)] + [f"xi_{i + 1}" for i in range(n)]
              + [f"eta_{i + 1}" for i in range(n)] + ["K", "K_deformed"])
    rows = np.column_stack([x, xi, eta, K, Kt])
    _rows_out(args, header, rows, f"{cfg.name}_curvature")
    return EXIT_OK


def cmd_deform(cfg: ScenarioConfig, args) -> int:
    """Unit circles of F and F~ at one point, sampled by direction angle."""
    if cfg.dim != 2:
        raise ConfigError(["deform samples planar indicatrices; the scenario must be 2-dimensional"])
    base, deformed = cfg.base_metric(), cfg.deformed_metric()
    x = args.point
    th = np.linspace(0.0, 2 * np.pi, args.dirs, endpoint=False)
    u = np.stack([np.cos(th), np.sin(th)], axis=-1)
    F = finsler_eval(base, x, u)
    Ft = finsler_eval(deformed, x, u)
    rows = np.column_stack([th, u, F, Ft, u / F[:, None], u / Ft[:, None]])
    header = ["theta", "u_1", "u_2", "F", "F_deformed",
              "base_unit_1", "base_unit_2", "deformed_unit_1", "deformed_unit_2"]
    _rows_out(args, header, rows, f"{cfg.name}_indicatrix")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="zermelo",
        description="Zermelo deformation of Finsler metrics by Killing fields: checks and data.",
        epilog=f"Bundled scenarios: {', '.join(bundled())}. Output directory: --out, "
               f"${OUT_ENV}, or ./zermelo_out.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, default_format="csv"):
        sp.add_argument("config", help="scenario TOML file or bundled scenario name")
        sp.add_argument("--out", type=str, default=None, help=f"output directory (overrides ${OUT_ENV})")
        sp.add_argument("--format", choices=("json", "csv"), default=default_format)

    sp = sub.add_parser("verify", help="run the scenario's checks and write a report")
    common(sp, "json")
    sp.add_argument("--curves", action="store_true", help="also dump one geodesic triple as CSV")
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("geodesic", help="integrate one unit geodesic and emit its samples")
    common(sp)
    sp.add_argument("--start", type=_vector, required=True, help="base point, e.g. 0.3,0.1")
    sp.add_argument("--direction", type=_vector, default=None,
                    help="initial direction (rescaled to unit base length); default e_1")
    sp.add_argument("--T", type=float, default=1.0, help="duration")
    sp.add_argument("--step", type=float, default=None, help="RK4 step (default from config)")
    sp.add_argument("--metric", choices=("base", "deformed"), default="deformed")
    sp.add_argument("--every", type=int, default=1, help="keep every k-th sample")
    sp.add_argument("-o", "--output", default=None, help="output file, '-' for stdout")
    sp.set_defaults(func=cmd_geodesic)

    sp = sub.add_parser("curvature", help="flag curvature of base and deformed metric on random flags")
    common(sp)
    sp.add_argument("--samples", type=int, default=100)
    sp.add_argument("--seed", type=int, default=None, help="default: the config's flag seed")
    sp.add_argument("-o", "--output", default=None, help="output file, '-' for stdout")
    sp.set_defaults(func=cmd_curvature)

    sp = sub.add_parser("deform", help="indicatrix samples of F and the deformed metric at a point")
    common(sp)
    sp.add_argument("--point", type=_vector, required=True)
    sp.add_argument("--dirs", type=int, default=360)
    sp.add_argument("-o", "--output", default=None, help="output file, '-' for stdout")
    sp.set_defaults(func=cmd_deform)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load(args.config)
        return args.func(cfg, args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ChartExitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())

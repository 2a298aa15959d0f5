"""Command-line entry point: ``gradeloc <subcommand> [options]``.

Exit codes: 0 success, 2 configuration/input error, 3 infeasible problem,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import grade_map as gm
from . import harness
from .config import ConfigError, load_config
from .ekf import SingularInnovation
from .planner import InfeasibleRoute

log = logging.getLogger("gradeloc")

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_NUMERICAL = 0, 2, 3, 4

DEFAULT_PRESET = {
    "gen-map": "table1_calibrated",
    "localize": "table1_calibrated",
    "plan": "dp_route",
    "track": "dp_route",
    "energy-offset": "energy_offset",
}


def _segment(text: str) -> tuple[float, float]:
    try:
        a, b = (float(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"segment must look like <start>:<end>, got {text!r}") from None
    if not b > a:
        raise argparse.ArgumentTypeError("segment end must be > start")
    return a, b


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="TOML config file")
    p.add_argument("--preset", help="named preset the config is layered over")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: ./out)")
    p.add_argument("--no-figures", action="store_true", help="skip PNG figures")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gradeloc", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-map", help="build a grade map from a polynomial or an elevation file")
    _common(p)
    p.add_argument("--coeffs", type=float, nargs="+", help="altitude polynomial coefficients")
    p.add_argument("--basis", choices=("power", "chebyshev"))
    p.add_argument("--length", type=float)
    p.add_argument("--ds", type=float)
    p.add_argument("--elevation", type=Path, help="elevation JSON (lat/lng/elevation) or arc,elevation CSV")
    p.add_argument("--smoothing", type=int, default=5, help="moving-average window on the grade")

    p = sub.add_parser("localize", help="Monte-Carlo EKF vs. velocity integration")
    _common(p)
    p.add_argument("--runs", type=int, help="number of seeds")
    p.add_argument("--seed", type=int, help="first seed (seeds run consecutively)")
    p.add_argument("--workers", type=int, default=1, help="parallel processes")

    p = sub.add_parser("plan", help="DP velocity plan(s) vs. the speed-limit profile")
    _common(p)
    p.add_argument("--gamma", type=float, action="append", help="time weight; repeat for several plans")
    p.add_argument("--route", type=Path, help="CSV arc_m,v_max_mps[,v_min_mps] speed bounds")

    p = sub.add_parser("track", help="closed-loop MPC tracking of the DP plan")
    _common(p)
    p.add_argument("--localizer", default=None, help="truth | ekf | offset:<m>")
    p.add_argument("--segment", type=_segment, help="<start>:<end> in metres")

    p = sub.add_parser("energy-offset", help="closed-loop energy with true vs. offset position")
    _common(p)
    p.add_argument("--offset-m", type=float)
    p.add_argument("--segment", type=_segment)

    p = sub.add_parser("report", help="re-render JSON reports as text (and figures)")
    p.add_argument("reports", type=Path, nargs="+")
    p.add_argument("--out", type=Path, help="directory for figures (default: next to each report)")
    p.add_argument("--no-figures", action="store_true")
    return ap


def _load(args) -> "harness.ExperimentConfig":
    name = args.preset
    if name is None and args.config is None:
        name = DEFAULT_PRESET[args.command]
    return load_config(args.config, name)


def _write(report, out: Path, stem: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    harness.save_report(report, out / f"{stem}.json", out / f"{stem}.txt")
    print(report.to_text())
    print(f"wrote {out / f'{stem}.json'}")


def cmd_gen_map(args) -> int:
    cfg = _load(args)
    profile = None
    if args.elevation is not None:
        if args.elevation.suffix.lower() == ".json":
            profile = gm.from_geo_samples(gm.load_elevation_json(args.elevation))
        else:
            profile = gm.load_profile_csv(args.elevation)
        gmap = gm.from_elevation(profile, args.smoothing)
    else:
        over = {k: v for k, v in (("coeffs", args.coeffs), ("basis", args.basis), ("length", args.length),
                                  ("ds", args.ds)) if v is not None}
        if args.coeffs is not None:
            over["kind"] = "polynomial"
        gmap = harness.build_map(cfg.with_overrides(map=over))
    args.out.mkdir(parents=True, exist_ok=True)
    gm.save_grade_csv(gmap, args.out / "grade_map.csv")
    if profile is not None:
        gm.save_profile_csv(profile, args.out / "profile.csv")
    g = np.asarray(gmap.grade)
    print(f"grade map: {gmap.arc.size} samples over {gmap.length:.1f} m, "
          f"grade in [{g.min():.4f}, {g.max():.4f}]")
    print(f"wrote {args.out / 'grade_map.csv'}")
    if not args.no_figures:
        from . import plots
        plots.plot_grade_map(gmap, args.out / "grade_map.png", profile)
    return EXIT_OK


def cmd_localize(args) -> int:
    cfg = _load(args)
    exp = {}
    if args.runs is not None:
        exp["n_runs"] = args.runs
    if args.seed is not None or args.runs is not None:
        first = args.seed if args.seed is not None else cfg.seeds[0]
        exp["seeds"] = list(range(first, first + (args.runs or len(cfg.seeds))))
    if exp:
        cfg = cfg.with_overrides(experiment=exp)
        cfg.validate()
    report = harness.run_localization_mc(cfg, workers=args.workers)
    _write(report, args.out, "localization")
    print(f"RMSE ratio (integration / EKF): {report.rmse_ratio:.2f}")
    if not args.no_figures:
        from . import plots
        plots.plot_rmse_bars(report, args.out / "localization_rmse.png")
        _, traces = harness.run_localization_once(cfg, cfg.seeds[0], keep_traces=True)
        plots.plot_localization_errors(traces, args.out / "localization_error.png")
    return EXIT_OK


def cmd_plan(args) -> int:
    cfg = _load(args)
    if args.route is not None:
        cfg = cfg.with_overrides(planner={"bounds_path": str(args.route)})
    gmap = harness.build_map(cfg)
    report = harness.run_plan(cfg, args.gamma, gmap)
    _write(report, args.out, "plan")
    for name, plan in report.plans.items():
        plan.save(args.out / f"plan_{name.replace('=', '_')}.csv")
    if not args.no_figures:
        from . import plots
        plots.plot_plans(report, harness.build_route(cfg, gmap), args.out / "plan.png")
    return EXIT_OK


def cmd_track(args) -> int:
    cfg = _load(args)
    gmap = harness.build_map(cfg)
    log_ = harness.run_closed_loop(cfg, args.localizer, gmap=gmap, segment=args.segment)
    args.out.mkdir(parents=True, exist_ok=True)
    log_.save(args.out / "track.csv", args.out / "track.json")
    s = log_.summary()
    print(f"localizer {log_.meta['localizer']}: energy {s['energy_kwh']:.4f} kWh, "
          f"tracking RMSE {s['tracking_rmse_mps']:.3f} m/s, {s['duration_s']:.1f} s, "
          f"{log_.infeasible_steps} infeasible steps")
    print(f"wrote {args.out / 'track.csv'}")
    if not args.no_figures:
        from . import plots
        plots.plot_closed_loop(log_, args.out / "track.png")
    return EXIT_OK


def cmd_energy_offset(args) -> int:
    cfg = _load(args)
    report = harness.run_energy_vs_offset(cfg, args.offset_m, args.segment)
    _write(report, args.out, "energy_offset")
    if not args.no_figures:
        from . import plots
        plots.plot_energy_offset(report, args.out / "energy_offset.png")
    return EXIT_OK


def cmd_report(args) -> int:
    for path in args.reports:
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
            text = harness.render_report_json(data)
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ConfigError(f"cannot render {path}: {exc}") from exc
        print(f"== {path}")
        print(text)
        if not args.no_figures:
            from . import plots
            out = args.out or path.parent
            fig = plots.plot_report(data, out / f"{path.stem}_summary.png")
            if fig is not None:
                print(f"wrote {fig}")
    return EXIT_OK


COMMANDS = {
    "gen-map": cmd_gen_map,
    "localize": cmd_localize,
    "plan": cmd_plan,
    "track": cmd_track,
    "energy-offset": cmd_energy_offset,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, gm.MapDataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleRoute as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (SingularInnovation, np.linalg.LinAlgError, FloatingPointError, OverflowError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        # bad parameter values surfaced by the library constructors
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

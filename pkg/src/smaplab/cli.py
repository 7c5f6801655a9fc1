"""Command-line entry point: ``smaplab {simulate,gauge,reconstruct,fit,converge}``.

Exit codes: 0 success, 1 numerical failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .experiments import (
    ConfigError,
    ExperimentConfig,
    load_config,
    run_convergence,
    run_experiment,
    write_csv,
    write_outputs,
)
from .gauge import GaugeError, build_frame, frame_residual, gauge_data, save_gauge
from .modulation import ModulationError, closest_harmonic, deficit, solve_scaling_pair
from .radial import GridError, h_profile
from .reconstruct import ReconstructionError, load_state, reconstruct
from .sphere import MapError, energy, load_profile, save_profile
from .trajectory import dumps_exact

log = logging.getLogger("smaplab")

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2
NUMERIC_ERRORS = (ArithmeticError, GaugeError, ModulationError, ReconstructionError)
FAILED_HALTS = ("instability", "chart_exit", "user_abort")


class UsageError(Exception):
    pass


def _common(parser: argparse.ArgumentParser, suppress: bool):
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", metavar="PATH", default=d, help="INI experiment configuration")
    parser.add_argument("--out", metavar="DIR", default=d, help="output directory")
    parser.add_argument("--seed", type=int, default=d, help="seed for generated initial data")
    parser.add_argument("--quiet", action="store_true", default=d if suppress else False, help="suppress progress output")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smaplab", description="Equivariant Schrodinger maps near harmonic maps.")
    _common(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", help="run the direct and/or gauged pipeline")
    _common(s, suppress=True)
    s.add_argument("--pipeline", choices=("direct", "gauged", "both"), help="override [run] pipeline")
    g = sub.add_parser("gauge", help="gauge report for a stored profile")
    _common(g, suppress=True)
    g.add_argument("profile")
    r = sub.add_parser("reconstruct", help="rebuild a profile from a gauged state file")
    _common(r, suppress=True)
    r.add_argument("state")
    r.add_argument("-o", "--output", help="profile path (default OUT/profile.txt)")
    f = sub.add_parser("fit", help="modulation and closest harmonic parameters of a profile")
    _common(f, suppress=True)
    f.add_argument("profile")
    c = sub.add_parser("converge", help="refinement ladders in dt and n")
    _common(c, suppress=True)
    c.add_argument("--ladder", choices=("dt", "n", "both"), default="both")
    return p


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    return cfg


def _emit(obj: dict, quiet: bool, path: Path | None = None):
    text = dumps_exact(obj)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text + "\n")
    if not quiet:
        print(text)


def cmd_simulate(args) -> int:
    cfg = _config(args)
    if getattr(args, "pipeline", None):
        cfg.pipeline = args.pipeline
    cfg.validate()
    res = run_experiment(cfg, keep_maps=cfg.snapshot_every > 0)
    summary = write_outputs(res, cfg, Path(cfg.out))
    if not args.quiet:
        print(dumps_exact(summary))
    bad = [t.halt_reason for t in res.trajectories().values() if t.halt_reason in FAILED_HALTS]
    if bad:
        for name, t in res.trajectories().items():
            if t.halt_reason in FAILED_HALTS:
                print(f"error: {name} pipeline halted ({t.halt_reason}): {t.message}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def _load(path: str):
    if not Path(path).is_file():
        raise UsageError(f"file not found: {path}")
    return load_profile(path)


def cmd_gauge(args) -> int:
    u = _load(args.profile)
    fr = build_frame(u)
    gd = gauge_data(u, fr, with_p=True)
    g = u.grid
    E = energy(u)
    h1, _ = h_profile(g.r, u.m)
    report = {
        "m": u.m,
        "energy": E,
        "q_l2": g.l2e(gd.q),
        "bogomolny_residual": np.pi * g.l2e(gd.q) ** 2 + 4.0 * np.pi * u.m - E,
        "nu_plus_h1_sup": float(np.max(np.abs(gd.nu + h1))),
        "frame_residual": frame_residual(u, fr),
        "conn_max": float(np.max(np.abs(gd.conn))),
    }
    out = Path(args.out) if args.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        save_gauge(out / "gauge.txt", gd)
    _emit(report, args.quiet, out / "gauge_report.json" if out else None)
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    if not Path(args.state).is_file():
        raise UsageError(f"file not found: {args.state}")
    state, m = load_state(args.state)
    u, rec = reconstruct(state, m, return_log=True)
    path = Path(args.output) if args.output else Path(args.out or ".") / "profile.txt"
    path.parent.mkdir(parents=True, exist_ok=True)
    save_profile(path, u)
    _emit(
        {"profile": str(path), "iterations": rec.iterations, "contraction": rec.factor, "updates": rec.updates},
        args.quiet,
    )
    return EXIT_OK


def cmd_fit(args) -> int:
    u = _load(args.profile)
    star, dist = closest_harmonic(u)
    st = solve_scaling_pair(u, init=star)
    report = {
        "s": st.s,
        "alpha": st.alpha,
        "s_star": star.s,
        "alpha_star": star.alpha,
        "dist_h1": dist,
        "delta": deficit(u),
        "energy": energy(u),
    }
    _emit(report, args.quiet, Path(args.out) / "fit.json" if args.out else None)
    return EXIT_OK


def cmd_converge(args) -> int:
    cfg = _config(args)
    cfg.validate()
    rows = run_convergence(cfg, args.ladder)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "convergence.csv", rows)
    if not args.quiet:
        for row in rows:
            print(",".join(format(v, ".6g") if isinstance(v, float) else str(v) for v in row.values()))
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "gauge": cmd_gauge,
    "reconstruct": cmd_reconstruct,
    "fit": cmd_fit,
    "converge": cmd_converge,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MapError, GridError) as exc:
        print(f"error: invalid input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NUMERIC_ERRORS as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except KeyboardInterrupt:
        print("error: interrupted (user_abort)", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end: ``cara-lab simulate | asymptotics | mc | validate``.

Exit codes: 0 success, 2 configuration error (the message names the field),
3 numerical or model error such as a singular information matrix.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .asymptotics import summary
from .config import Built, ConfigError, load_and_build
from .montecarlo import effective_design, run
from .trial import run_trial
from .validation import run_checks

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
DEFAULT_GAMMA_GRID = "0,1,2,4,8,16,100"
WORKERS_ENV = "CARA_LAB_WORKERS"


def _jsonable(obj):
    """Plain JSON types; NaN becomes null and infinities become strings."""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def _header(built: Built, command: str) -> dict:
    return {"artifact": "cara-lab", "version": __version__, "command": command, "config": built.resolved}


def _cell(value) -> str:
    value = _jsonable(value)
    if value is None:
        return ""
    if isinstance(value, (list, dict)):
        return json.dumps(value, separators=(",", ":"))
    return repr(value) if isinstance(value, float) else str(value)


def _render(header: dict, payload: dict, fmt: str, columns, rows, comments=()) -> str:
    if fmt == "json":
        doc = dict(header)
        doc["result"] = payload
        # repr-based float output is the shortest string that round-trips.
        return json.dumps(_jsonable(doc), indent=2, allow_nan=False) + "\n"
    buf = io.StringIO()
    buf.write(f"# {header['artifact']} {header['version']} {header['command']}\n")
    buf.write("# config: " + json.dumps(_jsonable(header["config"]), separators=(",", ":")) + "\n")
    for key, value in comments:
        buf.write(f"# {key}: " + json.dumps(_jsonable(value), separators=(",", ":")) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    return buf.getvalue()


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", newline="") as fh:
            fh.write(text)


def _prepare(args) -> Built:
    built = load_and_build(args.config)
    if getattr(args, "format", None):
        built.resolved["output"]["format"] = args.format
    return built


def _out_path(args, built: Built) -> str | None:
    # The path is not written into the echoed config: the same run written
    # to two locations must produce identical bytes.
    return args.out if args.out is not None else built.resolved["output"].get("path")


def cmd_simulate(args) -> int:
    built = _prepare(args)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed", "must be non-negative")
        built.resolved["trial"]["seed"] = args.seed
        built = Built(replace(built.trial, seed=args.seed), built.resolved)
    result = run_trial(built.trial)
    fmt = built.resolved["output"]["format"]
    rows = [(m, p, r) for m, p, r in result.snapshots]
    text = _render(_header(built, "simulate"), result.to_dict(), fmt, ["m", "proportion", "rho_hat"], rows)
    _emit(text, _out_path(args, built))
    return EXIT_OK


def _parse_grid(text: str) -> list[float]:
    grid = []
    for part in text.split(","):
        part = part.strip()
        try:
            value = math.inf if part == "inf" else float(part)
        except ValueError:
            raise ConfigError("--gamma-grid", f"cannot parse {part!r} as a number") from None
        if not value >= 0:
            raise ConfigError("--gamma-grid", "gamma values must be non-negative")
        grid.append(value)
    return grid


def cmd_asymptotics(args) -> int:
    built = _prepare(args)
    grid = _parse_grid(args.gamma_grid)
    target, _ = effective_design(built.trial)
    s = summary(built.trial.arms, built.trial.covariates, target)
    rows = [(g, s.lam(g), s.sigma_sq(g), s.efficiency_gap(g)) for g in grid]
    scalars = s.to_dict()
    for key in ("gamma", "lambda", "sigma_sq"):
        scalars.pop(key)
    payload = {
        "scalars": scalars,
        "grid": [{"gamma": g, "lambda": lam, "sigma_sq": sig, "gap": gap} for g, lam, sig, gap in rows],
    }
    header = _header(built, "asymptotics")
    columns = ["gamma", "lambda", "sigma_sq", "gap"]
    text = _render(header, payload, built.resolved["output"]["format"], columns, rows, [("scalars", scalars)])
    _emit(text, _out_path(args, built))
    return EXIT_OK


def _workers(value) -> int:
    if value is not None:
        return value
    env = os.environ.get(WORKERS_ENV)
    if env is None:
        return 1
    try:
        workers = int(env)
    except ValueError:
        raise ConfigError(WORKERS_ENV, f"must be a positive integer, got {env!r}") from None
    if workers < 1:
        raise ConfigError(WORKERS_ENV, "must be a positive integer")
    return workers


def cmd_mc(args) -> int:
    built = _prepare(args)
    if args.reps is not None:
        built.resolved["mc"]["replications"] = args.reps
    if args.workers is not None and args.workers < 1:
        raise ConfigError("--workers", "must be a positive integer")
    workers = _workers(args.workers)
    mc = built.mc()
    report = run(mc, workers=workers)
    rows = [(c.name, c.empirical, c.theoretical, c.se, c.tolerance, c.passed) for c in report.comparisons]
    columns = ["name", "empirical", "theoretical", "se", "tolerance", "passed"]
    text = _render(_header(built, "mc"), report.to_dict(), built.resolved["output"]["format"], columns, rows)
    _emit(text, _out_path(args, built))
    return EXIT_OK


def cmd_validate(args) -> int:
    results = run_checks(perturb_g_exponent=args.perturb_g_exponent)
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cara-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"cara-lab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, formats=True):
        p.add_argument("--config", required=True, help="JSON configuration file")
        p.add_argument("--out", help="output file (default: output.path from the config, else stdout)")
        if formats:
            p.add_argument("--format", choices=["json", "csv"], help="output format (default: output.format)")

    p = sub.add_parser("simulate", help="run one trial")
    common(p)
    p.add_argument("--seed", type=int, help="overrides trial.seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("asymptotics", help="limiting variances over a gamma grid")
    common(p)
    p.add_argument("--gamma-grid", default=DEFAULT_GAMMA_GRID, help="comma-separated gammas; 'inf' allowed")
    p.set_defaults(func=cmd_asymptotics)

    p = sub.add_parser("mc", help="replicated trials against theory")
    common(p)
    p.add_argument("--reps", type=int, help="overrides mc.replications")
    p.add_argument("--workers", type=int, help=f"worker processes (default: ${WORKERS_ENV} or 1)")
    p.set_defaults(func=cmd_mc)

    p = sub.add_parser("validate", help="numerical self-checks")
    p.add_argument("--perturb-g-exponent", type=float, default=1.0, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (np.linalg.LinAlgError, FloatingPointError, OverflowError, ZeroDivisionError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

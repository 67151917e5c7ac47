"""Command line: ``nonstat-pm run CONFIG`` and ``nonstat-pm validate CONFIG``.

``run`` writes ``results.csv``, ``results.json`` and ``manifest.json`` to
the output directory.  Exit status 2 signals an invalid configuration.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import platform
import sys
import time
from pathlib import Path

from . import __version__
from .config import ConfigError, load, validate
from .ensemble import resolve_threads

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.17g}"
    return v


def _versions() -> dict:
    import numba
    import numpy
    import scipy
    return {"nonstat_pm": __version__, "python": platform.python_version(), "numpy": numpy.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


def write_outputs(out_dir: Path, cfg, result, started: str, wall: float) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh)  # RFC 4180: CRLF rows, minimal quoting
        w.writerow(result.columns)
        for row in result.rows:
            w.writerow([_fmt(v) for v in row])
    (out_dir / "results.json").write_text(json.dumps(result.records, indent=2) + "\n")
    manifest = {
        "config_hash": cfg.hash,
        "kind": cfg.kind,
        "config": json.loads(cfg.canonical()),
        "config_path": cfg.path,
        "overrides": cfg.overrides,
        "versions": _versions(),
        "outputs": ["results.csv", "results.json"],
        "timestamp": {"started": started, "wall_time_s": wall},
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str) + "\n")


def cmd_run(args) -> int:
    from .experiments import run_experiment

    try:
        threads = resolve_threads(args.threads)
        cfg = load(args.config, {"seed": args.seed, "threads": threads, "dir": args.out_dir})
    except ConfigError as exc:
        for d in exc.diagnostics:
            print(f"config error: {d}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    t0 = time.perf_counter()
    result = run_experiment(cfg)
    wall = time.perf_counter() - t0
    out_dir = Path(cfg["output"]["dir"])
    write_outputs(out_dir, cfg, result, started, wall)
    print(f"{cfg.kind}: {len(result.rows)} rows -> {out_dir} (config {cfg.hash}, {wall:.1f} s)")
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        diags = validate(Path(args.config))
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for d in diags:
        print(f"config error: {d}", file=sys.stderr)
    if diags:
        return EXIT_CONFIG
    print("ok")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nonstat-pm", description="Intermittent-map CLT experiments")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the experiment described by CONFIG")
    r.add_argument("config")
    r.add_argument("--seed", type=int, default=None, help="override [experiment] seed")
    r.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: $NONSTAT_PM_THREADS or 1)")
    r.add_argument("--out-dir", default=None, help="override [output] dir")
    r.set_defaults(func=cmd_run)
    v = sub.add_parser("validate", help="check CONFIG without running it")
    v.add_argument("config")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

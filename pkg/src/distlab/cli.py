"""Command line entry point: ``distlab <experiment> [options] [--key value ...]``."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3


def _set_threads(k: int) -> None:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(k)


def _json_default(o):
    import numpy as np

    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _write_table(path: Path, rows: list[dict]) -> None:
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="distlab", description="Run a named distribution-learning experiment.", allow_abbrev=False
    )
    ap.add_argument("experiment", help="experiment name, or 'list'")
    ap.add_argument("--config", help="flat key = value file")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=None, help="output directory (default runs/<experiment>)")
    ap.add_argument("--check", action="store_true", help="exit nonzero if any check fails")
    ap.add_argument("--threads", type=int, default=None)
    ap.add_argument("--no-plot", action="store_true")
    return ap


def _pairs(extra: list[str]) -> dict[str, str]:
    out: dict[str, str] = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise ValueError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, val = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ValueError(f"missing value for --{key}")
            val = extra[i + 1]
            i += 2
        out[key.replace("-", "_")] = val
    return out


def main(argv=None) -> int:
    ap = build_parser()
    args, extra = ap.parse_known_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            ap.print_usage(sys.stderr)
            return EXIT_USAGE
        _set_threads(args.threads)

    from .config import ConfigError, ExperimentConfig, read_config_file
    from .experiments import REGISTRY
    from .plot import emit_plot
    from .rfm import DivergenceError

    if args.experiment == "list":
        for name, exp in REGISTRY.items():
            print(f"{name:16s} {exp.doc}")
        return EXIT_OK
    exp = REGISTRY.get(args.experiment)
    if exp is None:
        print(f"distlab: unknown experiment {args.experiment!r}", file=sys.stderr)
        return EXIT_USAGE
    try:
        overrides = read_config_file(args.config) if args.config else {}
        overrides.update(_pairs(extra))
        cfg = ExperimentConfig.resolve(
            exp.name, exp.defaults, overrides, args.seed, args.out or os.path.join("runs", exp.name)
        )
    except (ConfigError, ValueError, OSError) as e:
        print(f"distlab: {e}", file=sys.stderr)
        return EXIT_USAGE

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "manifest.json", cfg.manifest())
    try:
        res = exp.run(cfg.params, cfg.seed)
    except DivergenceError as e:
        partial = getattr(e, "log", None)
        if partial is not None and len(partial):
            partial.to_csv(out / "trajectory.csv")
        _write_json(out / "summary.json", {"status": "diverged", "error": str(e)})
        print(f"distlab: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as e:
        print(f"distlab: {e}", file=sys.stderr)
        return EXIT_USAGE

    res.log.to_csv(out / "trajectory.csv")
    for name, rows in res.tables.items():
        _write_table(out / f"{name}.csv", rows)
    if not args.no_plot:
        emit_plot(res.log, res.plot, out / "plot.svg")
    summary = {"status": "ok", "summary": res.summary, "checks": res.checks, "passed": res.passed}
    _write_json(out / "summary.json", summary)
    for k, v in res.checks.items():
        print(f"{'PASS' if v else 'FAIL'} {exp.name}.{k}")
    if args.check and not res.passed:
        return EXIT_CHECK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""Command line entry point: ``cylab <experiment> [options]``.

Writes ``<out>/<experiment>.csv`` (one header line, ``#`` metadata lines) and
``<out>/<experiment>.json``.  Exit status: 0 pass, 1 numerical failure, 2 usage.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .experiments import (
    COLUMNS,
    EXPERIMENTS,
    ExperimentConfig,
    UsageError,
    parse_config_text,
    parse_radii,
    run_experiment,
)

EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cylab", description="Numerical checks for Calabi-Yau metrics on C^3 with tangent cone C x A2.")
    p.add_argument("experiment", help="one of: " + ", ".join(EXPERIMENTS))
    p.add_argument("--config", help="key = value file; command-line options override it")
    p.add_argument("--b", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--kappa", type=float)
    p.add_argument("--radii", type=parse_radii, help="geometric schedule MIN:MAX:N")
    p.add_argument("--region", choices=("I", "V"))
    p.add_argument("--n-rays", dest="n_rays", type=int)
    p.add_argument("--samples", dest="n_samples", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--workers", type=int)
    p.add_argument("--version", action="version", version=f"cylab {__version__}")
    return p


def make_config(argv) -> ExperimentConfig:
    args = build_parser().parse_args(argv)
    values = {}
    if args.config:
        try:
            values.update(parse_config_text(Path(args.config).read_text()))
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
    values["experiment"] = args.experiment
    for key in ("b", "alpha", "kappa", "radii", "region", "n_rays", "n_samples", "seed", "out", "workers"):
        v = getattr(args, key)
        if v is not None:
            values[key] = v
    return ExperimentConfig(**values)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def render_csv(result) -> str:
    buf = io.StringIO()
    cfg = result.config
    buf.write(f"# experiment: {cfg.experiment}\n")
    buf.write(f"# seed: {cfg.seed}\n")
    echo = {k: v for k, v in cfg.echo().items() if k not in ("workers", "out")}
    buf.write(f"# config: {json.dumps(echo, sort_keys=True)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in result.rows:
        w.writerow([_fmt(r[c]) for c in COLUMNS])
    return buf.getvalue()


def write_outputs(result, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = result.config.experiment
    csv_path, json_path = out / f"{name}.csv", out / f"{name}.json"
    csv_path.write_text(render_csv(result))
    json_path.write_text(json.dumps(result.summary(), indent=2, sort_keys=True) + "\n")
    return csv_path, json_path


def main(argv=None) -> int:
    try:
        cfg = make_config(sys.argv[1:] if argv is None else argv)
    except UsageError as exc:
        print(f"cylab: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    result = run_experiment(cfg)
    csv_path, json_path = write_outputs(result, cfg.out)
    status = "PASS" if result.passed else "FAIL"
    for c in result.checks:
        print(f"{'ok  ' if c['passed'] else 'FAIL'} {c['name']}: {c['value']} ({c['threshold']})")
    for f in result.failures:
        print(f"FAIL task {f['task']}: {f['error']}")
    print(f"{cfg.experiment}: {status} ({result.runtime:.1f} s) -> {csv_path}, {json_path}")
    return EXIT_PASS if result.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``driftwise {simulate,replay,diagnose,sweep}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import yaml

from .errors import ConfigError, DriftwiseError
from .harness.config import ADAPTER_KEYS, config_from_dict, load_config, set_key
from .harness.diagnostics import run_diagnostics
from .harness.output import emit_results, fmt
from .harness.runner import run_experiment

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FAULT = 3

log = logging.getLogger("driftwise")


def _raw_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return yaml.safe_load(fh) or {}
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None


def _run_and_emit(cfg, out_dir, parallel):
    records, infos = run_experiment(cfg, parallel=parallel)
    emit_results(records, out_dir, cfg.to_dict(), infos, per_step=cfg.output.get("per_step", True))
    for r in records:
        status = "FAULT " + r.fault if r.faults else f"avg_error={r.avg_error:.4f} regret={r.regret:+.4f}"
        print(f"{r.adapter:>14s} seed={r.seed}  {status}")
    print(f"results written to {out_dir}")
    return EXIT_FAULT if any(r.faults for r in records) else EXIT_OK


def cmd_simulate(args):
    cfg = load_config(args.config)
    out = Path(args.out) if args.out else cfg.resolve_path(cfg.output["dir"])
    return _run_and_emit(cfg, out, args.parallel)


def cmd_replay(args):
    raw = _raw_config(args.config) if args.config else {}
    base = Path(args.config).parent if args.config else Path(".")
    if args.adapter not in ADAPTER_KEYS:
        raise ConfigError(f"unknown adapter {args.adapter!r}")
    with open(args.stream, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    n_classes = len(header) - 2
    raw.setdefault("task", {})
    raw["task"]["holdout"] = str(Path(args.holdout).resolve())
    raw["task"]["n_classes"] = n_classes
    raw["schedule"] = {"stream": str(Path(args.stream).resolve())}
    # a recorded stream is fixed, so extra seeds only repeat the same run
    raw.setdefault("seeds", [0])
    chosen = [a for a in raw.get("adapters", []) if a.get("name") == args.adapter]
    adapters = chosen or [{"name": args.adapter}]
    if args.adapter == "ftfwh" and not chosen:
        adapters[0]["window"] = args.window
    if not any(a.get("name") == "ofc" for a in adapters):
        adapters.append({"name": "ofc"})
    raw["adapters"] = adapters
    cfg = config_from_dict(raw, base_dir=base)
    out = Path(args.out) if args.out else cfg.resolve_path(cfg.output["dir"])
    return _run_and_emit(cfg, out, 1)


def cmd_diagnose(args):
    cfg = load_config(args.config)
    report = run_diagnostics(cfg, n_chords=args.chords, n_sym=args.sym)
    summary = report.summary()
    print(json.dumps(summary, indent=2, sort_keys=True))
    out = Path(args.out) if args.out else cfg.resolve_path(cfg.output["dir"])
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "diagnostics.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out / "diagnostics_hist.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["series", "bin_lo", "bin_hi", "count"])
        for name, (counts, edges) in report.histograms().items():
            for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
                w.writerow([name, fmt(lo), fmt(hi), int(c)])
    return EXIT_OK


def cmd_sweep(args):
    raw = _raw_config(args.config)
    base = Path(args.config).parent
    values = [yaml.safe_load(v) for v in args.values.split(",")]
    root = Path(args.out) if args.out else base / raw.get("output", {}).get("dir", "results")
    status = EXIT_OK
    rows = []
    for v in values:
        cfg = config_from_dict(set_key(raw, args.param, v), base_dir=base)
        out = root / f"{args.param}={v}"
        print(f"== {args.param} = {v}")
        status = max(status, _run_and_emit(cfg, out, args.parallel))
        with open(out / "summary.csv", newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                rows.append({"param": args.param, "value": v, **row})
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "sweep.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return status


def build_parser():
    parser = argparse.ArgumentParser(prog="driftwise", description="Online label-shift adaptation experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the configured experiment")
    p.add_argument("--config", required=True, help="YAML experiment config")
    p.add_argument("--out", help="output directory (default: output.dir from the config)")
    p.add_argument("--parallel", type=int, default=1, help="seeds run concurrently")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("replay", help="adapt over a recorded prediction stream")
    p.add_argument("--stream", required=True, help="CSV with header t,label,p1..pM")
    p.add_argument("--holdout", required=True, help="CSV with header label,p1..pM")
    p.add_argument("--adapter", required=True, help="bc, ofc, fth, ftfwh or ogd")
    p.add_argument("--config", help="optional YAML for adapter options and seeds")
    p.add_argument("--window", type=int, default=1000, help="window for ftfwh when not configured")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("diagnose", help="convexity and symmetric-optimality checks")
    p.add_argument("--config", required=True)
    p.add_argument("--chords", type=int, default=10_000)
    p.add_argument("--sym", type=int, default=1000)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("sweep", help="repeat simulate over values of one config key")
    p.add_argument("--config", required=True)
    p.add_argument("--param", required=True, help="dotted key, e.g. adapters.1.window")
    p.add_argument("--values", required=True, help="comma-separated values (YAML scalars)")
    p.add_argument("--out", help="root output directory")
    p.add_argument("--parallel", type=int, default=1)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DriftwiseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAULT


if __name__ == "__main__":
    sys.exit(main())

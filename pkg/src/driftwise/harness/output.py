"""Result files: per-step CSV, summary CSV, cross-seed aggregate and manifest.

Files are written into a staging directory next to the destination and moved
into place with ``os.replace``, so a failed run never leaves half-written
results behind.
"""

from __future__ import annotations

import csv
import json
import os
import shutil
import tempfile
from pathlib import Path

import numpy as np

PER_STEP = "per_step.csv"
SUMMARY = "summary.csv"
AGGREGATE = "aggregate.csv"
MANIFEST = "manifest.json"

SUMMARY_FIELDS = ("adapter", "seed", "avg_error", "ofc_loss", "regret", "L", "eta", "faults")


def fmt(x):
    """17 significant digits: enough to round-trip any double."""
    return format(float(x), ".17g")


def _write_per_step(path, records):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("t,adapter,seed,error,loss_estimate\n")
        for rec in records:
            if rec.errors is None:
                continue
            n = rec.errors.size
            steps = np.arange(1, n + 1)
            if rec.loss_estimates is None:
                est = ["nan"] * n
            else:
                est = [fmt(v) for v in rec.loss_estimates]
            prefix = f",{rec.adapter},{rec.seed},"
            fh.writelines(
                f"{t}{prefix}{int(e)},{s}\n" for t, e, s in zip(steps.tolist(), rec.errors.tolist(), est)
            )


def _write_summary(path, records):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        for r in records:
            w.writerow([r.adapter, r.seed, fmt(r.avg_error), fmt(r.ofc_loss), fmt(r.regret), fmt(r.lipschitz), fmt(r.eta), r.faults])


def aggregate(records):
    """Mean, standard deviation and standard error of the error across seeds."""
    rows = []
    order = []
    for r in records:
        if r.adapter not in order:
            order.append(r.adapter)
    for name in order:
        runs = [r for r in records if r.adapter == name and not r.faults]
        errs = np.array([r.avg_error for r in runs])
        regs = np.array([r.regret for r in runs])
        n = errs.size
        std = float(errs.std(ddof=1)) if n > 1 else float("nan")
        rows.append(
            {
                "adapter": name,
                "n_seeds": n,
                "mean_error": float(errs.mean()) if n else float("nan"),
                "std_error": std,
                "se_error": std / np.sqrt(n) if n > 1 else float("nan"),
                "mean_regret": float(regs.mean()) if n else float("nan"),
                "faults": sum(r.faults for r in records if r.adapter == name),
            }
        )
    return rows


def _write_aggregate(path, records):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["adapter", "n_seeds", "mean_error", "std_error", "se_error", "mean_regret", "faults"])
        for row in aggregate(records):
            w.writerow(
                [row["adapter"], row["n_seeds"], fmt(row["mean_error"]), fmt(row["std_error"]),
                 fmt(row["se_error"]), fmt(row["mean_regret"]), row["faults"]]
            )


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else str(x)
    return x


def emit_results(records, out_dir, config=None, seeds_info=(), per_step=True, extra=None):
    """Write all result files into ``out_dir`` atomically; returns the file paths."""
    from .. import __version__

    if not records:
        raise ValueError("no records to write")
    out_dir = Path(out_dir)
    parent = out_dir.parent
    parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}.staging-", dir=parent))
    try:
        files = [SUMMARY, AGGREGATE, MANIFEST]
        _write_summary(staging / SUMMARY, records)
        _write_aggregate(staging / AGGREGATE, records)
        if per_step:
            _write_per_step(staging / PER_STEP, records)
            files.append(PER_STEP)
        manifest = {
            "version": __version__,
            "config": config,
            "seeds": list(seeds_info),
            "runs": [
                {
                    "adapter": r.adapter,
                    "seed": r.seed,
                    "avg_error": r.avg_error,
                    "ofc_loss": r.ofc_loss,
                    "regret": r.regret,
                    "lipschitz": r.lipschitz,
                    "eta": r.eta,
                    "faults": r.faults,
                    "fault": r.fault,
                    "metadata": r.metadata,
                    "wall_clock": r.wall_clock,
                }
                for r in records
            ],
        }
        if extra:
            manifest.update(extra)
        with open(staging / MANIFEST, "w", encoding="utf-8") as fh:
            json.dump(_jsonable(manifest), fh, indent=2, sort_keys=True)
            fh.write("\n")
        out_dir.mkdir(parents=True, exist_ok=True)
        for name in files:
            os.replace(staging / name, out_dir / name)
    finally:
        shutil.rmtree(staging, ignore_errors=True)
    return [out_dir / f for f in files]


def read_summary(path):
    """Parse a summary CSV back into dicts of floats and ints."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rows.append(
                {
                    "adapter": row["adapter"],
                    "seed": int(row["seed"]),
                    "avg_error": float(row["avg_error"]),
                    "ofc_loss": float(row["ofc_loss"]),
                    "regret": float(row["regret"]),
                    "L": float(row["L"]),
                    "eta": float(row["eta"]),
                    "faults": int(row["faults"]),
                }
            )
    return rows

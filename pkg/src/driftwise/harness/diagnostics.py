"""Checks of the two structural assumptions behind the regret bounds.

*Convexity*: for random ``(q, p1, p2)`` the midpoint gap
``h(1/2) - (h(0) + h(1)) / 2`` of ``h(s) = loss((1 - s) p1 + s p2; q)`` should be
non-positive. *Symmetric optimality*: the minimiser of ``loss(.; q)`` should sit
close to ``q`` itself. Both are measured for a temperature-calibrated base
classifier and for a deliberately overconfident one built from the same
features.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..adaptation import ofc_solve
from ..classifier import HoldoutSet, SharpenedSource, fit_temperature
from ..errors import DriftwiseError
from ..estimation import LossContext, class_losses_batch
from ..simplex import make_rng, sample_uniform_simplex
from .runner import _source

GAP_SLACK = 1e-3
# a minimiser must beat q by this many paired standard errors to count
SIGNIFICANCE = 2.0


@dataclass
class ConvexityResult:
    kind: str
    gaps: np.ndarray
    slack: float = GAP_SLACK

    @property
    def pass_fraction(self):
        return float(np.mean(self.gaps <= self.slack))

    @property
    def strict_fraction(self):
        return float(np.mean(self.gaps <= 0.0))

    @property
    def worst_gap(self):
        return float(self.gaps.max())


@dataclass
class SymmetryResult:
    distances: np.ndarray
    failures: int = 0

    @property
    def median(self):
        return float(np.median(self.distances)) if self.distances.size else float("nan")


@dataclass
class SourceDiagnostics:
    name: str
    temperature: float
    convexity: dict
    symmetry: SymmetryResult


@dataclass
class DiagnosticsReport:
    sources: dict = field(default_factory=dict)

    def histograms(self, bins=40):
        """Binned counts for every gap and distance sample."""
        out = {}
        for name, src in self.sources.items():
            for kind, conv in src.convexity.items():
                counts, edges = np.histogram(conv.gaps, bins=bins)
                out[f"{name}/gap/{kind}"] = (counts, edges)
            if src.symmetry.distances.size:
                counts, edges = np.histogram(src.symmetry.distances, bins=bins)
                out[f"{name}/distance"] = (counts, edges)
        return out

    def summary(self):
        rows = {}
        for name, src in self.sources.items():
            row = {"temperature": src.temperature}
            for kind, conv in src.convexity.items():
                row[f"convex_pass_{kind}"] = conv.pass_fraction
                row[f"convex_strict_{kind}"] = conv.strict_fraction
                row[f"worst_gap_{kind}"] = conv.worst_gap
            row["median_distance"] = src.symmetry.median
            row["solver_failures"] = src.symmetry.failures
            rows[name] = row
        return rows


def midpoint_gaps(ctx, q, p1, p2, kind):
    """Midpoint convexity gaps for each row of ``(q, p1, p2)``."""
    mid = 0.5 * (p1 + p2)
    n = q.shape[0]
    losses = class_losses_batch(ctx, np.vstack([p1, p2, mid]), kind)
    h = np.einsum("ij,ij->i", losses, np.vstack([q, q, q]))
    return h[2 * n :] - 0.5 * (h[:n] + h[n : 2 * n])


def symmetric_distances(ctx, qs, rng, starts=2, iterations=100, significance=SIGNIFICANCE):
    dists, failures = [], 0
    for q in qs:
        try:
            res = ofc_solve(
                ctx, q, rng, n_starts=starts, iterations=iterations, kind="zero-one", significance=significance
            )
        except DriftwiseError:
            failures += 1
            continue
        dists.append(float(np.linalg.norm(q - res.p)))
    return SymmetryResult(np.asarray(dists), failures)


def diagnostic_contexts(cfg, seed):
    """Calibrated and overconfident loss contexts on identical hold-out features."""
    task = cfg.task.build()
    base = _source(cfg, task)
    x, y = task.sample(make_rng(seed, "holdout"), cfg.holdout_size)
    raw = HoldoutSet.from_source(base, x, y)
    fit = fit_temperature(raw)
    calibrated = raw.tempered(fit.temperature)
    sharp = HoldoutSet.from_source(SharpenedSource(base, cfg.task.sharpen_power), x, y)
    return {
        "calibrated": (LossContext(calibrated, task.prior), fit.temperature),
        "uncalibrated": (LossContext(sharp, task.prior), 1.0),
    }


def run_diagnostics(cfg, n_chords=10_000, n_sym=1000, seed=None, sym_starts=2, sym_iterations=100, kinds=("zero-one", "surrogate")):
    seed = cfg.seeds[0] if seed is None else seed
    report = DiagnosticsReport()
    m = cfg.task.n_classes
    for name, (ctx, temperature) in diagnostic_contexts(cfg, seed).items():
        rng = make_rng(seed, "chords")
        q, p1, p2 = (sample_uniform_simplex(rng, m, size=n_chords) for _ in range(3))
        conv = {k: ConvexityResult(k, midpoint_gaps(ctx, q, p1, p2, k)) for k in kinds}
        qs = sample_uniform_simplex(make_rng(seed, "symmetry"), m, size=n_sym)
        sym = symmetric_distances(ctx, qs, make_rng(seed, "symmetry-solver"), sym_starts, sym_iterations)
        report.sources[name] = SourceDiagnostics(name, temperature, conv, sym)
    return report

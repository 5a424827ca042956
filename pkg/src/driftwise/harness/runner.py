"""End-to-end experiment execution.

One *world* per seed holds the base classifier, its hold-out set, the loss
context and the simulated (or replayed) stream. Every configured adapter then
runs over the same stream. Adapters are handed a :class:`PredictionFeed`, which
carries predictions only; the true labels stay inside a :class:`LabelVault` that
counts every access, so label leaks are auditable.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..adaptation import FixedAdapter, FTFWHAdapter, FTHAdapter, OGDAdapter, ofc_solve
from ..classifier import (
    BayesSource,
    HoldoutSet,
    SharpenedSource,
    TemperedSource,
    fit_temperature,
    reweighted_predictions,
    temper,
)
from ..errors import DriftwiseError
from ..estimation import LossContext, class_losses_batch
from ..shift import Stream, empirical_marginal, generate_stream, load_stream
from ..simplex import make_rng

log = logging.getLogger(__name__)

_SCORE_CHUNK = 8192


class LabelVault:
    """Holds the withheld labels and records who asked for them."""

    def __init__(self, labels):
        self._labels = np.asarray(labels)
        self.accesses = {}
        self.phase = "harness"

    def reveal(self, purpose):
        key = (self.phase, purpose)
        self.accesses[key] = self.accesses.get(key, 0) + 1
        return self._labels

    @property
    def adapter_accesses(self):
        return sum(n for (phase, _), n in self.accesses.items() if phase == "adapter")


class PredictionFeed:
    """The only view of the stream adapters ever see."""

    __slots__ = ("_probs",)

    def __init__(self, probs):
        self._probs = probs

    def __len__(self):
        return self._probs.shape[0]

    @property
    def probs(self):
        return self._probs

    def predicted_labels(self):
        return np.argmax(self._probs, axis=1)


@dataclass
class World:
    seed: int
    prior: np.ndarray
    holdout: HoldoutSet
    ctx: LossContext
    feed: PredictionFeed
    vault: LabelVault
    marginals: np.ndarray | None
    temperature: float = 1.0

    @property
    def horizon(self):
        return len(self.feed)


@dataclass
class RunRecord:
    adapter: str
    seed: int
    errors: np.ndarray | None
    avg_error: float
    ofc_loss: float
    regret: float
    lipschitz: float = float("nan")
    eta: float = float("nan")
    faults: int = 0
    fault: str = ""
    loss_estimates: np.ndarray | None = None
    ofc_p: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)
    wall_clock: float = 0.0


def _source(cfg, task):
    base = BayesSource(task)
    if cfg.task.source == "sharpened":
        return SharpenedSource(base, cfg.task.sharpen_power)
    return base


def build_world(cfg, seed):
    """Hold-out set, loss context and stream for one seed."""
    if cfg.replay:
        holdout = HoldoutSet.from_csv(cfg.resolve_path(cfg.task.holdout))
        _, stream = load_stream(cfg.resolve_path(cfg.schedule["stream"]))
        if stream.n_classes != holdout.n_classes:
            raise DriftwiseError("stream and hold-out disagree on the number of classes")
        prior = holdout.class_counts / len(holdout)
        temperature = 1.0
        if cfg.calibration:
            temperature = fit_temperature(holdout).temperature
            holdout = holdout.tempered(temperature)
            stream = Stream(temper(stream.probs, temperature), stream.labels)
        marginals = np.eye(holdout.n_classes)[stream.labels]
    else:
        task = cfg.task.build()
        source = _source(cfg, task)
        holdout = HoldoutSet.draw(task, source, cfg.holdout_size, make_rng(seed, "holdout"))
        temperature = 1.0
        if cfg.calibration:
            temperature = fit_temperature(holdout).temperature
            holdout = holdout.tempered(temperature)
            source = TemperedSource(source, temperature)
        schedule = cfg.build_schedule()
        stream = generate_stream(schedule, task, source, make_rng(seed, "stream"))
        prior = task.prior
        marginals = schedule.marginals()
    holdout.check_coverage()
    ctx = LossContext(holdout, prior)
    return World(
        seed, np.asarray(prior), holdout, ctx, PredictionFeed(stream.probs), LabelVault(stream.labels), marginals, temperature
    )


def make_adapter(spec, world, horizon, seed, ofc_p=None):
    rng = make_rng(seed, "adapter", spec.label)
    ctx = world.ctx
    if spec.name == "bc":
        return FixedAdapter(world.prior)
    if spec.name == "ofc":
        return FixedAdapter(ofc_p)
    if spec.name == "fth":
        return FTHAdapter(ctx)
    if spec.name == "ftfwh":
        return FTFWHAdapter(ctx, spec.options["window"])
    ocfg = spec.ogd_config(horizon)
    if ocfg.gradient == "surrogate":
        ctx = ctx.with_kind("surrogate")
    return OGDAdapter(ctx, ocfg, rng, lipschitz=spec.options.get("lipschitz"))


def score(world, trajectory):
    """Per-step 0-1 error of the re-weighted classifier (uses the withheld labels)."""
    labels = world.vault.reveal("scoring")
    probs = world.feed.probs
    out = np.empty(labels.size, dtype=np.int8)
    for lo in range(0, labels.size, _SCORE_CHUNK):
        hi = lo + _SCORE_CHUNK
        pred = reweighted_predictions(probs[lo:hi], world.prior, trajectory[lo:hi])
        out[lo:hi] = pred != labels[lo:hi]
    return out


def loss_estimates(world, trajectory, predicted):
    """Unbiased per-step loss estimates ``<loss(p_t), q_hat_t>``."""
    out = np.empty(trajectory.shape[0])
    for lo in range(0, out.size, 2048):
        hi = lo + 2048
        losses = class_losses_batch(world.ctx, trajectory[lo:hi])
        out[lo:hi] = np.einsum("ij,ij->i", losses, world.ctx.estimates[predicted[lo:hi]])
    return out


def expected_average_loss(ctx, trajectory, marginals, kind, stride=1):
    """Mean of ``loss(p_t; q_t)`` over every ``stride``-th step."""
    idx = np.arange(0, trajectory.shape[0], max(int(stride), 1))
    total = 0.0
    for lo in range(0, idx.size, 1024):
        sel = idx[lo : lo + 1024]
        losses = class_losses_batch(ctx, trajectory[sel], kind)
        total += float(np.einsum("ij,ij->", losses, marginals[sel]))
    return total / idx.size


@dataclass
class OfcReference:
    p: np.ndarray
    loss: float
    objective: float
    converged: bool
    target: np.ndarray
    reference: str


def solve_reference(cfg, world):
    """Best fixed re-weighting in hindsight for this seed's stream."""
    st = cfg.ofc
    m = world.ctx.n_classes
    if st.reference == "exact" and world.marginals is not None:
        target = world.marginals.mean(axis=0)
    else:
        target = empirical_marginal(world.vault.reveal("ofc"), m)
    ctx = world.ctx.with_kind(st.loss)
    res = ofc_solve(ctx, target, make_rng(world.seed, "ofc"), st.starts, st.iterations, st.step)
    if st.reference == "exact":
        loss = res.loss
    else:
        fixed = np.broadcast_to(res.p, (world.horizon, m))
        loss = float(score(world, fixed).mean())
    return OfcReference(np.array(res.p), loss, res.loss, res.converged, target, st.reference)


def run_adapter(cfg, spec, world, ref):
    t0 = time.perf_counter()
    rec = RunRecord(spec.label, world.seed, None, float("nan"), ref.loss, float("nan"), ofc_p=ref.p)
    try:
        adapter = make_adapter(spec, world, world.horizon, world.seed, ref.p)
        world.vault.phase = "adapter"
        try:
            predicted = world.feed.predicted_labels()
            trajectory = adapter.trajectory(predicted)
        finally:
            world.vault.phase = "harness"
        rec.errors = score(world, trajectory)
        rec.avg_error = float(rec.errors.mean())
        rec.regret = rec.avg_error - ref.loss
        rec.lipschitz = float(adapter.metadata.get("lipschitz", float("nan")))
        rec.eta = float(adapter.metadata.get("eta", float("nan")))
        rec.metadata.update({k: v for k, v in adapter.metadata.items() if k not in ("lipschitz", "eta")})
        if cfg.output.get("loss_estimates"):
            rec.loss_estimates = loss_estimates(world, trajectory, predicted)
        if ref.reference == "exact" and world.marginals is not None:
            kind = cfg.ofc.loss
            ctx = world.ctx.with_kind(kind)
            avg = expected_average_loss(ctx, trajectory, world.marginals, kind, cfg.ofc.eval_stride)
            rec.metadata["expected_loss"] = avg
            rec.metadata["exact_regret"] = avg - ref.loss
    except (DriftwiseError, FloatingPointError) as exc:
        log.error("adapter %s seed %d faulted: %s", spec.label, world.seed, exc)
        rec.faults = 1
        rec.fault = f"{type(exc).__name__}: {exc}"
        rec.errors = None
    rec.wall_clock = time.perf_counter() - t0
    return rec


def run_seed(cfg, seed):
    """All adapters for one seed; returns ``(records, seed_info)``."""
    try:
        world = build_world(cfg, seed)
        ref = solve_reference(cfg, world)
    except DriftwiseError as exc:
        log.error("seed %d could not be set up: %s", seed, exc)
        fault = f"{type(exc).__name__}: {exc}"
        recs = [
            RunRecord(a.label, seed, None, float("nan"), float("nan"), float("nan"), faults=1, fault=fault)
            for a in cfg.adapters
        ]
        return recs, {"seed": seed, "fault": fault}
    records = [run_adapter(cfg, spec, world, ref) for spec in cfg.adapters]
    info = {
        "seed": seed,
        "horizon": world.horizon,
        "temperature": world.temperature,
        "condition_number": world.ctx.condition_number,
        "estimate_bound": world.ctx.estimate_bound,
        "ofc_p": ref.p.tolist(),
        "ofc_objective": ref.objective,
        "ofc_converged": ref.converged,
        "ofc_reference": ref.reference,
        "label_accesses_by_adapters": world.vault.adapter_accesses,
    }
    return records, info


def run_experiment(cfg, parallel=1):
    """Run every (adapter, seed) pair; records come back in config order."""
    if parallel > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(run_seed, [cfg] * len(cfg.seeds), cfg.seeds))
    else:
        results = [run_seed(cfg, s) for s in cfg.seeds]
    records, infos = [], []
    for recs, info in results:
        records.extend(recs)
        infos.append(info)
    return records, infos

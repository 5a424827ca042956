"""Label-shift schedules, simulated streams and stream files.

Steps ``t`` are 1-based throughout, running from 1 to the horizon ``T``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _csvio
from .errors import InvalidInputError, InvalidStepError, ParseError, ValidationError
from .simplex import as_simplex

SCHEDULE_KINDS = ("constant", "monotone", "periodic", "exp-periodic", "replay")


def concentrated(n_classes, dominant, mass=0.55):
    """Marginal with ``mass`` on class ``dominant`` and the rest spread evenly."""
    if not 0 <= dominant < n_classes:
        raise InvalidInputError(f"dominant class {dominant} outside 0..{n_classes - 1}")
    if n_classes == 1:
        return np.ones(1)
    q = np.full(n_classes, (1.0 - mass) / (n_classes - 1))
    q[dominant] = mass
    return q


def _frozen(a):
    a = np.asarray(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ShiftSchedule:
    """Deterministic map from step ``t`` to the label marginal ``q_t``.

    Build instances through the classmethods rather than directly.
    """

    kind: str
    horizon: int
    start: np.ndarray
    end: np.ndarray | None = None
    period: int | None = None
    growth: int | None = None
    sequence: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise InvalidInputError(f"unknown schedule kind {self.kind!r}")
        if int(self.horizon) < 1:
            raise InvalidInputError("horizon must be >= 1")
        object.__setattr__(self, "horizon", int(self.horizon))
        object.__setattr__(self, "start", as_simplex(self.start))
        if self.end is not None:
            end = as_simplex(self.end)
            if end.size != self.start.size:
                raise InvalidInputError("schedule endpoints differ in length")
            object.__setattr__(self, "end", end)
        if self.kind in ("monotone", "periodic", "exp-periodic") and self.end is None:
            raise InvalidInputError(f"{self.kind} schedule needs two endpoints")
        if self.kind == "periodic" and (self.period is None or self.period < 1):
            raise InvalidInputError("periodic schedule needs period >= 1")
        if self.kind == "exp-periodic" and (self.growth is None or self.growth < 2):
            raise InvalidInputError("exp-periodic schedule needs growth >= 2")
        if self.kind == "replay":
            seq = np.asarray(self.sequence, dtype=float)
            if seq.shape != (self.horizon, self.start.size):
                raise InvalidInputError("replay sequence must have shape (T, M)")
            object.__setattr__(self, "sequence", _frozen(seq))

    @classmethod
    def constant(cls, q, horizon):
        return cls("constant", horizon, q)

    @classmethod
    def monotone(cls, start, end, horizon):
        return cls("monotone", horizon, start, end)

    @classmethod
    def periodic(cls, start, end, period, horizon):
        return cls("periodic", horizon, start, end, period=int(period))

    @classmethod
    def exp_periodic(cls, start, end, growth, horizon):
        return cls("exp-periodic", horizon, start, end, growth=int(growth))

    @classmethod
    def replay(cls, labels, n_classes):
        """Schedule whose marginal at ``t`` is the one-hot of the ``t``-th label."""
        labels = np.asarray(labels, dtype=np.int64)
        if labels.size == 0:
            raise InvalidInputError("replay needs at least one label")
        seq = np.eye(n_classes)[labels]
        return cls("replay", labels.size, seq[0], sequence=seq)

    @property
    def n_classes(self):
        return self.start.size

    def _check(self, t):
        if not 1 <= t <= self.horizon:
            raise InvalidStepError(f"step {t} outside 1..{self.horizon}")

    def uses_start(self, steps):
        """Boolean mask: True where the two-phase schedules sit on ``start``."""
        steps = np.asarray(steps, dtype=np.int64)
        if self.kind == "periodic":
            # phase index ceil(t / T_p); odd phases use the start marginal
            return ((steps + self.period - 1) // self.period) % 2 == 1
        k = self.growth
        powers = [1]
        while powers[-1] <= self.horizon:
            powers.append(powers[-1] * k)
        powers = np.asarray(powers, dtype=np.int64)
        j = np.searchsorted(powers, steps, side="right") - 1
        return (j % 2 == 0) | (powers[j] == steps)

    def marginal_at(self, t):
        t = int(t)
        self._check(t)
        return self.marginals(np.array([t]))[0]

    def marginals(self, steps=None):
        """Marginals for an array of steps (default: all of 1..T) as rows."""
        steps = np.arange(1, self.horizon + 1) if steps is None else np.asarray(steps, dtype=np.int64)
        if steps.size and (steps.min() < 1 or steps.max() > self.horizon):
            raise InvalidStepError(f"steps must lie in 1..{self.horizon}")
        if self.kind == "constant":
            out = np.broadcast_to(self.start, (steps.size, self.n_classes)).copy()
        elif self.kind == "monotone":
            frac = (steps / self.horizon)[:, None]
            out = (1.0 - frac) * self.start + frac * self.end
        elif self.kind == "replay":
            out = self.sequence[steps - 1].copy()
        else:
            out = np.where(self.uses_start(steps)[:, None], self.start, self.end)
        out.flags.writeable = False
        return out

    def describe(self):
        d = {"kind": self.kind, "horizon": self.horizon}
        if self.kind != "replay":
            d["start"] = self.start.tolist()
        if self.end is not None:
            d["end"] = self.end.tolist()
        if self.period is not None:
            d["period"] = self.period
        if self.growth is not None:
            d["growth"] = self.growth
        return d


@dataclass(frozen=True)
class StreamSample:
    t: int
    probs: np.ndarray
    label: int
    features: np.ndarray | None = None


@dataclass(frozen=True)
class Stream:
    """Ordered predictions with their withheld labels.

    ``probs[t - 1]`` is the base classifier's output for step ``t``; the labels
    are stored separately so callers can hand adapters the predictions alone.
    """

    probs: np.ndarray
    labels: np.ndarray
    features: np.ndarray | None = None

    def __post_init__(self):
        probs = _frozen(np.array(self.probs, dtype=float))
        labels = np.array(self.labels, dtype=np.int64)
        labels.flags.writeable = False
        if probs.ndim != 2 or probs.shape[0] != labels.size:
            raise InvalidInputError("stream probs must have shape (T, M) matching labels")
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.labels.size

    @property
    def n_classes(self):
        return self.probs.shape[1]

    def sample(self, t):
        if not 1 <= t <= len(self):
            raise InvalidStepError(f"step {t} outside 1..{len(self)}")
        x = None if self.features is None else self.features[t - 1]
        return StreamSample(t, self.probs[t - 1], int(self.labels[t - 1]), x)

    def predicted_labels(self):
        return np.argmax(self.probs, axis=1)

    def label_frequencies(self):
        return np.bincount(self.labels, minlength=self.n_classes) / len(self)


def _draw_labels(u, marginals):
    cum = np.cumsum(marginals, axis=1)
    cum /= cum[:, -1:]
    return np.minimum((cum < u[:, None]).sum(axis=1), marginals.shape[1] - 1)


def next_sample(schedule, task, rng, t, source=None):
    """Draw step ``t``: ``y ~ q_t`` then ``x ~ N(mean_y, sigma^2 I)``."""
    q = schedule.marginal_at(t)
    u = np.array([1.0 - rng.random()])
    y = int(_draw_labels(u, q[None, :])[0])
    x = task.sample_features(rng, np.array([y]))
    probs = None if source is None else source(x)[0]
    return StreamSample(int(t), probs, y, x[0])


def generate_stream(schedule, task, source, rng, keep_features=False):
    """Simulate the whole horizon at once.

    All label uniforms are drawn before the feature normals, so the label
    sequence depends only on the schedule and the generator state.
    """
    if schedule.n_classes != task.n_classes:
        raise InvalidInputError("schedule and task disagree on the number of classes")
    marg = schedule.marginals()
    u = 1.0 - rng.random(schedule.horizon)
    labels = _draw_labels(u, marg)
    x = task.sample_features(rng, labels)
    return Stream(source(x), labels, x if keep_features else None)


def write_stream(path, stream):
    steps = np.arange(1, len(stream) + 1)
    _csvio.write_prob_csv(path, ("t", "label"), np.column_stack([steps, stream.labels + 1]), stream.probs)


def load_stream(path):
    """Read a ``t,label,p1..pM`` file; returns ``(replay schedule, stream)``."""
    path = Path(path)
    ints, probs = _csvio.read_prob_csv(path, ("t", "label"))
    if ints.shape[0] == 0:
        raise ParseError("stream file has no rows", 2, path)
    steps, labels = ints[:, 0], ints[:, 1]
    m = probs.shape[1]
    if steps[0] < 1:
        raise ParseError(f"step {steps[0]} is not a positive integer", 2, path)
    bad = np.flatnonzero(np.diff(steps) <= 0)
    if bad.size:
        raise ParseError("steps must be strictly increasing", int(bad[0]) + 3, path)
    bad = np.flatnonzero((labels < 1) | (labels > m))
    if bad.size:
        raise ValidationError(f"label {labels[bad[0]]} outside 1..{m}", int(bad[0]) + 2, path)
    stream = Stream(probs, labels - 1)
    return ShiftSchedule.replay(stream.labels, m), stream


def preset_schedules(n_classes=10, horizon=100_000, periods=(100, 1000, 10000), growths=(2, 5), start=None, end=None):
    """The benchmark family: constant, monotone, periodic and exp-periodic shifts."""
    q1 = concentrated(n_classes, 3) if start is None else start
    q2 = concentrated(n_classes, 4) if end is None else end
    out = {
        "constant": ShiftSchedule.constant(q1, horizon),
        "monotone": ShiftSchedule.monotone(q1, q2, horizon),
    }
    for tp in periods:
        out[f"periodic-{tp}"] = ShiftSchedule.periodic(q1, q2, tp, horizon)
    for k in growths:
        out[f"exp-periodic-{k}"] = ShiftSchedule.exp_periodic(q1, q2, k, horizon)
    return out


def empirical_marginal(labels, n_classes):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise InvalidInputError("no labels")
    return np.bincount(labels, minlength=n_classes) / labels.size


"""Base classifiers, temperature scaling and hold-out confusion matrices.

A *posterior source* is any object with an ``n_classes`` attribute that maps a
feature array of shape (n, d) to predicted probabilities of shape (n, M). The
synthetic :class:`GaussianMixtureTask` supplies an exact Bayes posterior, so
calibrated and deliberately miscalibrated base classifiers can both be built
from it.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Protocol

import numpy as np
from scipy import optimize, special

from . import _csvio
from .errors import CoverageError, DegenerateWeightError, InvalidInputError, InvalidTaskError, ParseError
from .simplex import as_simplex

#: Circle radius giving a Bayes error of roughly 11% for the 10-class, unit
#: variance default task.
DEFAULT_RADIUS = 5.2

_TINY = np.finfo(float).tiny


class PosteriorSource(Protocol):
    n_classes: int

    def __call__(self, features: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class GaussianMixtureTask:
    """Isotropic Gaussian class-conditionals with a training label marginal.

    ``means`` has shape (M, d); every class shares the variance ``variance``.
    """

    means: np.ndarray
    variance: float
    prior: np.ndarray

    def __post_init__(self):
        means = np.array(self.means, dtype=float)
        if means.ndim != 2 or means.shape[0] < 1:
            raise InvalidTaskError("means must have shape (M, d)")
        if not np.all(np.isfinite(means)):
            raise InvalidTaskError("means must be finite")
        if not (np.isfinite(self.variance) and self.variance > 0):
            raise InvalidTaskError(f"variance must be positive, got {self.variance}")
        prior = as_simplex(self.prior)
        if prior.size != means.shape[0]:
            raise InvalidTaskError("prior length does not match the number of means")
        means.flags.writeable = False
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "prior", prior)
        object.__setattr__(self, "variance", float(self.variance))

    @property
    def n_classes(self):
        return self.means.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]

    @classmethod
    def on_circle(cls, n_classes=10, dim=2, radius=DEFAULT_RADIUS, variance=1.0, prior=None):
        """Means equally spaced on a circle in the first two coordinates."""
        if n_classes < 1 or dim < 1:
            raise InvalidTaskError("n_classes and dim must be positive")
        angles = 2.0 * np.pi * np.arange(n_classes) / n_classes
        means = np.zeros((n_classes, dim))
        means[:, 0] = radius * np.cos(angles)
        if dim > 1:
            means[:, 1] = radius * np.sin(angles)
        if prior is None:
            prior = np.full(n_classes, 1.0 / n_classes)
        return cls(means, variance, prior)

    def log_likelihood(self, features):
        x = self._check_features(features)
        sq = ((x[:, None, :] - self.means[None, :, :]) ** 2).sum(axis=-1)
        return -sq / (2.0 * self.variance)

    def sample_features(self, rng, labels):
        labels = np.asarray(labels, dtype=np.int64)
        noise = rng.standard_normal((labels.size, self.dim))
        return self.means[labels] + np.sqrt(self.variance) * noise

    def sample(self, rng, n, marginal=None):
        """Draw ``n`` labelled samples with label law ``marginal`` (default: prior)."""
        q = self.prior if marginal is None else as_simplex(marginal)
        labels = rng.choice(self.n_classes, size=int(n), p=q)
        return self.sample_features(rng, labels), labels

    def _check_features(self, features):
        x = np.asarray(features, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise InvalidInputError(f"features must have trailing dimension {self.dim}")
        if not np.all(np.isfinite(x)):
            raise InvalidInputError("features must be finite")
        return x


def bayes_posterior(task, x):
    """Exact posterior ``P(y | x)`` of ``task`` under its training prior.

    Accepts a single feature vector (returns shape (M,)) or a batch (n, d).
    """
    single = np.asarray(x).ndim == 1
    logits = task.log_likelihood(x) + np.log(task.prior)
    post = special.softmax(logits, axis=1)
    return post[0] if single else post


class BayesSource:
    """The calibrated base classifier: the task's exact posterior."""

    def __init__(self, task):
        self.task = task
        self.n_classes = task.n_classes

    def __call__(self, features):
        return bayes_posterior(self.task, np.atleast_2d(features))


class SharpenedSource:
    """Over-confident source: ``base`` posteriors raised to ``power`` and renormalised."""

    def __init__(self, base, power=2.0):
        if power <= 0:
            raise InvalidInputError("power must be positive")
        self.base = base
        self.power = float(power)
        self.n_classes = base.n_classes

    def __call__(self, features):
        logp = np.log(np.maximum(self.base(features), _TINY))
        return special.softmax(self.power * logp, axis=1)


class TemperedSource:
    def __init__(self, base, temperature):
        self.base = base
        self.temperature = float(temperature)
        self.n_classes = base.n_classes

    def __call__(self, features):
        return temper(self.base(features), self.temperature)


def temper(probs, temperature):
    """Temperature-scale probabilities via their logarithms.

    ``softmax(log(p) / T)``; the additive constant between log-probabilities and
    logits cancels in the softmax. ``T == 1`` returns an exact copy.
    """
    probs = np.asarray(probs, dtype=float)
    if not temperature > 0:
        raise InvalidInputError("temperature must be positive")
    if temperature == 1.0:
        return probs.copy()
    logp = np.log(np.maximum(probs, _TINY))
    return special.softmax(logp / temperature, axis=-1)


@dataclass(frozen=True)
class HoldoutSet:
    """Labelled hold-out predictions of the base classifier.

    ``labels`` are 0-based; ``probs[k]`` is the cached predicted vector for
    sample ``k``.
    """

    labels: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        labels = np.array(self.labels, dtype=np.int64).reshape(-1)
        probs = np.array(self.probs, dtype=float)
        if probs.ndim != 2 or probs.shape[0] != labels.size:
            raise InvalidInputError("probs must have shape (n, M) matching labels")
        m = probs.shape[1]
        if labels.size and (labels.min() < 0 or labels.max() >= m):
            raise InvalidInputError(f"labels must lie in 0..{m - 1}")
        if not np.all(np.isfinite(probs)) or np.any(probs < 0):
            raise InvalidInputError("predicted probabilities must be finite and non-negative")
        if labels.size and np.max(np.abs(probs.sum(axis=1) - 1.0)) > _csvio.PROB_ROW_TOL:
            raise InvalidInputError("predicted probability rows must sum to 1")
        labels.flags.writeable = False
        probs.flags.writeable = False
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "probs", probs)

    @property
    def n_classes(self):
        return self.probs.shape[1]

    def __len__(self):
        return self.labels.size

    @property
    def class_counts(self):
        return np.bincount(self.labels, minlength=self.n_classes)

    def missing_classes(self):
        return np.flatnonzero(self.class_counts == 0)

    def check_coverage(self):
        missing = self.missing_classes()
        if missing.size:
            raise CoverageError(missing)

    @classmethod
    def from_source(cls, source, features, labels):
        return cls(labels, source(features))

    @classmethod
    def draw(cls, task, source, n, rng):
        x, y = task.sample(rng, n)
        return cls.from_source(source, x, y)

    def tempered(self, temperature):
        return HoldoutSet(self.labels, temper(self.probs, temperature))

    def to_csv(self, path):
        _csvio.write_prob_csv(path, ("label",), self.labels[:, None] + 1, self.probs)

    @classmethod
    def from_csv(cls, path):
        ints, probs = _csvio.read_prob_csv(path, ("label",))
        labels = ints[:, 0]
        m = probs.shape[1]
        bad = np.flatnonzero((labels < 1) | (labels > m))
        if bad.size:
            raise ParseError(f"label {labels[bad[0]]} outside 1..{m}", int(bad[0]) + 2, path)
        return cls(labels - 1, probs)


def reweight(probs, prior, p):
    """Re-weighted posterior ``p[y] / prior[y] * P(x)[y]``, renormalised per row."""
    w = np.asarray(probs, dtype=float) * (np.asarray(p, dtype=float) / np.asarray(prior, dtype=float))
    z = w.sum(axis=-1, keepdims=True)
    if np.any(z <= 0):
        raise DegenerateWeightError("re-weighted posterior has zero normaliser")
    return w / z


def reweighted_predictions(probs, prior, p):
    """Labels predicted by the re-weighted classifier (lowest index on ties)."""
    scores = np.asarray(probs, dtype=float) * (np.asarray(p, dtype=float) / np.asarray(prior, dtype=float))
    return np.argmax(scores, axis=-1)


@dataclass(frozen=True)
class ConfusionMatrix:
    """``matrix[i, j]``: rate of predicting ``j`` for true class ``i``."""

    matrix: np.ndarray
    kind: str
    counts: np.ndarray

    @property
    def standard_errors(self):
        """Binomial standard errors of each hard entry, ``sqrt(c(1-c)/n_i)``."""
        c = self.matrix
        return np.sqrt(c * (1.0 - c) / self.counts[:, None])


def estimate_confusion(holdout, kind="hard", reweight_by=None):
    """Hold-out confusion matrix of the (optionally re-weighted) base classifier.

    Parameters
    ----------
    holdout : HoldoutSet
    kind : {"hard", "soft"}
        ``hard`` counts argmax predictions; ``soft`` averages the predicted
        probability vectors.
    reweight_by : (prior, p), optional
        Evaluate ``g(x; f0, prior, p)`` instead of ``f0``.
    """
    if kind not in ("hard", "soft"):
        raise InvalidInputError(f"unknown confusion kind {kind!r}")
    holdout.check_coverage()
    m = holdout.n_classes
    probs = holdout.probs
    if reweight_by is not None:
        prior, p = reweight_by
        p = as_simplex(p)
        probs = reweight(probs, prior, p) if kind == "soft" else probs * (p / np.asarray(prior))
    counts = holdout.class_counts
    if kind == "hard":
        pred = np.argmax(probs, axis=1)
        joint = np.zeros((m, m))
        np.add.at(joint, (holdout.labels, pred), 1.0)
    else:
        joint = np.zeros((m, m))
        np.add.at(joint, holdout.labels, probs)
    mat = joint / counts[:, None]
    if kind == "soft":
        mat = mat / mat.sum(axis=1, keepdims=True)
    mat.flags.writeable = False
    return ConfusionMatrix(mat, kind, counts)


@dataclass(frozen=True)
class TemperatureFit:
    temperature: float
    nll: float
    degenerate: bool = False


#: Log-spaced coarse grid for the temperature search.
TEMPERATURE_GRID = np.geomspace(0.05, 20.0, 121)


def _nll(logp, labels, temperature):
    z = special.log_softmax(logp / temperature, axis=1)
    return -float(np.mean(z[np.arange(labels.size), labels]))


def fit_temperature(holdout, grid=TEMPERATURE_GRID, rtol=1e-4):
    """Temperature minimising the hold-out negative log-likelihood.

    A coarse log-spaced grid over [0.05, 20] brackets the minimum, which
    golden-section search then refines to relative tolerance ``rtol``.
    A hold-out of fewer than two samples is flagged degenerate and gets T = 1.
    """
    if holdout.n_classes == 1:
        return TemperatureFit(1.0, 0.0)
    if len(holdout) < 2:
        warnings.warn("hold-out set too small to fit a temperature; using T=1", stacklevel=2)
        return TemperatureFit(1.0, float("nan"), degenerate=True)
    logp = np.log(np.maximum(holdout.probs, _TINY))
    labels = holdout.labels
    values = np.array([_nll(logp, labels, t) for t in grid])
    k = int(np.argmin(values))
    if k == 0 or k == len(grid) - 1:
        return TemperatureFit(float(grid[k]), float(values[k]))
    res = optimize.minimize_scalar(
        lambda t: _nll(logp, labels, t),
        bracket=(grid[k - 1], grid[k], grid[k + 1]),
        method="golden",
        options={"xtol": rtol},
    )
    t_best, f_best = float(res.x), float(res.fun)
    if f_best > values[k]:
        t_best, f_best = float(grid[k]), float(values[k])
    return TemperatureFit(t_best, f_best)

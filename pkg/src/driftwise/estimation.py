"""Unbiased loss and gradient estimation from unlabeled predictions.

The expected loss of the re-weighted classifier ``g(x; f0, q0, p)`` under a
label marginal ``q`` is linear in ``q``::

    loss(p; q) = <1 - diag(C_g(p)), q>

where row ``c`` of the confusion matrix ``C_g(p)`` is measured on the class-``c``
hold-out samples. Everything here therefore works with the *class-loss
vector* ``1 - diag(C_g(p))`` and takes the inner product with ``q`` last. ``q``
may be a raw marginal estimate with negative entries; linearity keeps the
estimates unbiased.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from itertools import combinations
from math import comb

import numpy as np
from scipy import linalg

from . import _kernels
from .classifier import estimate_confusion
from .errors import DegenerateWeightError, EstimationError, InvalidInputError
from .simplex import as_raw, as_simplex

LOSS_KINDS = ("zero-one", "surrogate")

_CHUNK = 256
# widening of the cached screening box around a stencil; successive OGD
# iterates move far less than this, so one screen serves many steps
SCREEN_MARGIN = 0.005


class _ScreenCache:
    """Samples whose 0-1 outcome is fixed over a box of re-weighting vectors."""

    def __init__(self):
        self.lo = None
        self.hi = None
        self.samples = None
        self.settled = None
        self.rebuilds = 0

    def lookup(self, ctx, lo, hi):
        if self.lo is None or np.any(lo < self.lo) or np.any(hi > self.hi):
            self.lo = np.maximum(lo - SCREEN_MARGIN, 0.0)
            self.hi = hi + SCREEN_MARGIN
            self.samples, self.settled = _kernels.box_screen(ctx.weights, ctx.labels, self.lo, self.hi)
            self.rebuilds += 1
        return self.samples, self.settled


class LossContext:
    """Hold-out data and the inverted base confusion matrix, shared by all runs.

    Parameters
    ----------
    holdout : HoldoutSet
        Labelled base-classifier predictions from the training distribution.
    prior : array_like
        Training label marginal ``q0`` (strictly positive).
    kind : {"zero-one", "surrogate"}
        Which loss :func:`class_losses` evaluates by default.
    max_condition : float
        Largest acceptable condition number of the base confusion matrix.
    allow_ill_conditioned : bool
        Skip the condition-number guard (a singular matrix is still an error).
    """

    def __init__(self, holdout, prior, kind="zero-one", max_condition=1e6, allow_ill_conditioned=False):
        if kind not in LOSS_KINDS:
            raise InvalidInputError(f"unknown loss kind {kind!r}")
        prior = as_simplex(prior)
        if prior.size != holdout.n_classes:
            raise InvalidInputError("prior length does not match the hold-out class count")
        if np.any(prior <= 0):
            raise InvalidInputError("training prior must be strictly positive")
        self.holdout = holdout
        self.prior = prior
        self.kind = kind
        self.n_classes = holdout.n_classes
        self.confusion = estimate_confusion(holdout, "hard")
        self.counts = holdout.class_counts.astype(float)
        self.labels = np.ascontiguousarray(holdout.labels, dtype=np.int64)
        self.weights = np.ascontiguousarray(holdout.probs / prior)
        self.weights.flags.writeable = False

        c = self.confusion.matrix
        try:
            cond = float(np.linalg.cond(c))
        except np.linalg.LinAlgError:
            cond = float("inf")
        self.condition_number = cond
        if not np.isfinite(cond) or np.linalg.matrix_rank(c) < self.n_classes:
            raise EstimationError("base confusion matrix is singular", cond)
        if cond > max_condition and not allow_ill_conditioned:
            raise EstimationError(
                f"base confusion matrix is ill-conditioned (bound {max_condition:.3g})", cond
            )
        self._lu = linalg.lu_factor(c.T)
        # row i is the marginal estimate produced by predicted label i
        est = linalg.lu_solve(self._lu, np.eye(self.n_classes)).T
        est.flags.writeable = False
        self.estimates = est
        self._onehot = np.zeros((len(holdout), self.n_classes))
        self._onehot[np.arange(len(holdout)), self.labels] = 1.0
        # shared by with_kind() siblings; only ever narrows work, never results
        self._screen = _ScreenCache()

    def with_kind(self, kind):
        """Sibling context sharing all cached arrays but with another loss kind."""
        if kind not in LOSS_KINDS:
            raise InvalidInputError(f"unknown loss kind {kind!r}")
        other = copy.copy(self)
        other.kind = kind
        return other

    @property
    def estimate_bound(self):
        """``c = 2 max_i ||(C^T)^-1 e_i||_inf``, the scale of the marginal estimates."""
        return 2.0 * float(np.max(np.abs(self.estimates)))


def estimate_marginal(ctx, predicted_label):
    """Unbiased estimate ``(C^T)^-1 e_i`` of the current label marginal.

    The result is *raw*: entries may be negative or exceed one and must not be
    projected where unbiasedness matters.
    """
    i = int(predicted_label)
    if not 0 <= i < ctx.n_classes:
        raise InvalidInputError(f"predicted label {i} outside 0..{ctx.n_classes - 1}")
    return ctx.estimates[i]


def _as_points(points, m):
    pts = np.ascontiguousarray(np.atleast_2d(np.asarray(points, dtype=float)))
    if pts.shape[1] != m:
        raise InvalidInputError(f"re-weighting vectors must have length {m}")
    if not np.all(np.isfinite(pts)) or np.any(pts < 0):
        raise InvalidInputError("re-weighting vectors must be finite and non-negative")
    return pts


def class_losses_batch(ctx, points, kind=None):
    """Class-loss vectors for each row of ``points``; shape (B, M).

    Rows need not be normalised (both losses are scale invariant in ``p``) but
    must be non-negative.
    """
    kind = ctx.kind if kind is None else kind
    pts = _as_points(points, ctx.n_classes)
    if kind == "zero-one":
        correct = _kernels.class_correct_counts(ctx.weights, ctx.labels, pts)
        return 1.0 - correct / ctx.counts
    if kind != "surrogate":
        raise InvalidInputError(f"unknown loss kind {kind!r}")
    out = np.empty_like(pts)
    own_w = ctx.weights[np.arange(ctx.labels.size), ctx.labels]
    for lo in range(0, pts.shape[0], _CHUNK):
        chunk = pts[lo : lo + _CHUNK]
        z = ctx.weights @ chunk.T
        if np.any(z <= 0):
            raise DegenerateWeightError("re-weighted posterior has zero normaliser")
        ratio = own_w[:, None] * chunk.T[ctx.labels] / z
        out[lo : lo + _CHUNK] = 1.0 - (ctx._onehot.T @ ratio).T / ctx.counts
    return out


def sample_losses(ctx, p, kind=None):
    """Per hold-out sample loss at ``p``: 0-1 indicator or ``1 - P_g(x)[y]``."""
    kind = ctx.kind if kind is None else kind
    p = _as_points(p, ctx.n_classes)[0]
    scores = ctx.weights * p
    if kind == "zero-one":
        return (np.argmax(scores, axis=1) != ctx.labels).astype(float)
    z = scores.sum(axis=1)
    if np.any(z <= 0):
        raise DegenerateWeightError("re-weighted posterior has zero normaliser")
    return 1.0 - scores[np.arange(ctx.labels.size), ctx.labels] / z


def paired_difference(ctx, p_new, p_old, q, kind=None):
    """``loss(p_new; q) - loss(p_old; q)`` and its standard error.

    Both losses are measured on the same hold-out samples, so the error bar
    comes from the per-class variance of the paired per-sample differences.
    """
    d = sample_losses(ctx, p_new, kind) - sample_losses(ctx, p_old, kind)
    q = np.asarray(q, dtype=float)
    means = np.bincount(ctx.labels, weights=d, minlength=ctx.n_classes) / ctx.counts
    sq = np.bincount(ctx.labels, weights=d * d, minlength=ctx.n_classes) / ctx.counts
    var = np.maximum(sq - means**2, 0.0) / ctx.counts
    return float(means @ q), float(np.sqrt(np.sum(q**2 * var)))


def class_losses(ctx, p, kind=None):
    """``1 - diag(C_g(p))`` measured on the hold-out set."""
    return class_losses_batch(ctx, p, kind)[0]


def expected_loss(ctx, p, q, kind=None):
    """Expected loss of the classifier re-weighted by ``p`` under marginal ``q``."""
    p = as_simplex(p)
    q = as_raw(q)
    return float(class_losses(ctx, p, kind) @ q)


def unbiased_loss_estimate(ctx, p, predicted_label, kind=None):
    return expected_loss(ctx, p, estimate_marginal(ctx, predicted_label), kind)


def expected_losses_along(ctx, trajectory, marginals, kind=None):
    """``loss(p_t; q_t)`` for paired rows of ``trajectory`` and ``marginals``."""
    out = np.empty(len(trajectory))
    for lo in range(0, len(trajectory), 4096):
        cl = class_losses_batch(ctx, trajectory[lo : lo + 4096], kind)
        out[lo : lo + 4096] = np.einsum("ij,ij->i", cl, marginals[lo : lo + 4096])
    return out


# -- finite differences -------------------------------------------------------


def fd_coefficients(order):
    """Weights ``alpha_j = 2 (-1)^(j+1) C(k, k-j) / C(k+j, k)`` for ``j = 1..k``."""
    k = int(order)
    if k < 1:
        raise InvalidInputError("finite-difference order must be >= 1")
    return np.array(
        [2.0 * (-1) ** (j + 1) * comb(k, k - j) / comb(k + j, k) for j in range(1, k + 1)]
    )


@dataclass(frozen=True)
class FiniteDiffConfig:
    """Central-difference settings.

    ``step`` is in simplex-coordinate units, ``order`` is the stencil half-width
    ``k`` and the stencil is exact on polynomials of degree ``2k``. With
    ``smoothing_count > 1`` the gradient is averaged over that many centres drawn
    uniformly from the ``smoothing_radius`` ball around ``p`` (non-negative part).
    """

    step: float = 0.02
    order: int = 1
    smoothing_count: int = 1
    smoothing_radius: float = 0.01

    def __post_init__(self):
        if not self.step > 0:
            raise InvalidInputError("finite-difference step must be positive")
        if self.order < 1 or self.smoothing_count < 1 or self.smoothing_radius < 0:
            raise InvalidInputError("invalid finite-difference configuration")

    @property
    def coefficients(self):
        return fd_coefficients(self.order)


@dataclass
class FiniteDiffStats:
    """Counters reported in run metadata."""

    evaluations: int = 0
    clamped: int = 0
    rejected_centres: int = 0
    extra: dict = field(default_factory=dict)


def _smoothing_centres(p, cfg, rng, stats):
    if cfg.smoothing_count == 1 or cfg.smoothing_radius == 0:
        return [p]
    if rng is None:
        raise InvalidInputError("smoothing requires a random generator")
    m = p.size
    centres = []
    for _ in range(cfg.smoothing_count):
        for _attempt in range(100):
            d = rng.standard_normal(m)
            d *= cfg.smoothing_radius * rng.random() ** (1.0 / m) / np.linalg.norm(d)
            c = p + d
            if np.all(c >= 0):
                break
            stats.rejected_centres += 1
        else:
            stats.clamped += int(np.sum(c < 0))
            c = np.maximum(c, 0.0)
        centres.append(c)
    return centres


def _stencil(p, cfg, stats):
    """Coordinates and clamped values of the ``2kM`` perturbed points."""
    m = p.size
    j = np.arange(1, cfg.order + 1, dtype=float)
    coords = np.repeat(np.arange(m), 2 * cfg.order)
    offsets = np.tile(np.concatenate([j, -j]) * cfg.step, m)
    values = p[coords] + offsets
    neg = values < 0
    if np.any(neg):
        stats.clamped += int(neg.sum())
        values = np.where(neg, 0.0, values)
    return coords, values


def _stencil_box(centre, coords, values):
    """Smallest box holding the centre and every perturbed point."""
    lo = centre.copy()
    hi = centre.copy()
    np.minimum.at(lo, coords, values)
    np.maximum.at(hi, coords, values)
    return lo, hi


def _combine(evals, cfg, m):
    """Fold stencil evaluations (shape (2kM, ...)) into derivatives (M, ...)."""
    k = cfg.order
    alpha = cfg.coefficients
    j = np.arange(1, k + 1, dtype=float)
    e = evals.reshape((m, 2, k) + evals.shape[1:])
    diff = e[:, 0] - e[:, 1]
    w = (alpha / (2.0 * cfg.step * j)).reshape((1, k) + (1,) * (evals.ndim - 1))
    return (w * diff).sum(axis=1)


def finite_diff_jacobian(ctx, p, cfg=FiniteDiffConfig(), rng=None, kind=None, stats=None):
    """Finite-difference Jacobian of the class-loss vector; ``J[c, i]``."""
    kind = ctx.kind if kind is None else kind
    stats = FiniteDiffStats() if stats is None else stats
    p = np.asarray(p, dtype=float)
    m = ctx.n_classes
    jac = np.zeros((m, m))
    centres = _smoothing_centres(p, cfg, rng, stats)
    for centre in centres:
        coords, values = _stencil(centre, cfg, stats)
        if kind == "zero-one":
            centre = np.ascontiguousarray(centre)
            samples, settled = ctx._screen.lookup(ctx, *_stencil_box(centre, coords, values))
            correct = _kernels.perturbed_subset(
                ctx.weights, ctx.labels, centre, coords, values, samples, settled
            )
            evals = 1.0 - correct / ctx.counts
        else:
            pts = np.repeat(centre[None, :], coords.size, axis=0)
            pts[np.arange(coords.size), coords] = values
            evals = class_losses_batch(ctx, pts, kind)
        stats.evaluations += coords.size
        jac += _combine(evals, cfg, m).T
    return jac / len(centres)


def finite_diff_gradient(ctx, p, q, cfg=FiniteDiffConfig(), rng=None, loss=None, kind=None, stats=None):
    """Finite-difference estimate of the gradient of ``loss(p; q)`` in ``p``.

    Coordinate ``i`` is ``sum_j alpha_j [l(p + j d e_i) - l(p - j d e_i)] / (2 d j)``.
    Perturbed coordinates falling below zero are clamped to zero (the
    re-weighting self-normalises) and counted in ``stats.clamped``.

    ``loss`` optionally replaces the hold-out loss by any callable
    ``loss(p, q) -> float``; ``ctx`` may then be ``None``.
    """
    stats = FiniteDiffStats() if stats is None else stats
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if loss is None:
        return finite_diff_jacobian(ctx, p, cfg, rng, kind, stats).T @ q
    m = p.size
    grad = np.zeros(m)
    centres = _smoothing_centres(p, cfg, rng, stats)
    for centre in centres:
        coords, values = _stencil(centre, cfg, stats)
        evals = np.empty(coords.size)
        for n, (i, v) in enumerate(zip(coords, values)):
            pt = centre.copy()
            pt[i] = v
            evals[n] = loss(pt, q)
        stats.evaluations += coords.size
        grad += _combine(evals, cfg, m)
    return grad / len(centres)


# -- surrogate loss -----------------------------------------------------------


def _surrogate_parts(ctx, p):
    p = np.asarray(p, dtype=float)
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise InvalidInputError("re-weighting vector must be finite and non-negative")
    z = ctx.weights @ p
    if np.any(z <= 0):
        raise DegenerateWeightError("re-weighted posterior has zero normaliser for some hold-out sample")
    rows = np.arange(ctx.labels.size)
    a = ctx.weights[rows, ctx.labels] / z
    return p, z, a


def surrogate_gradient(ctx, p, q):
    """Exact gradient in ``p`` of the hold-out surrogate loss ``E[1 - P_g(x)[y]]``.

    With ``w = P_f0(x) / q0`` and ``Z = <w, p>``, the re-weighted probability of
    class ``i`` is ``w_i p_i / Z`` and its derivative in ``p_k`` is
    ``(1{i=k} w_i Z - p_i w_i w_k) / Z**2``. Sample ``s`` of class ``c`` enters
    with weight ``q[c] / n_c``.
    """
    p, z, a = _surrogate_parts(ctx, p)
    q = np.asarray(q, dtype=float)
    beta = (q / ctx.counts)[ctx.labels] * a
    direct = np.bincount(ctx.labels, weights=beta, minlength=ctx.n_classes)
    cross = ctx.weights.T @ (beta * p[ctx.labels] / z)
    return cross - direct


def surrogate_jacobian(ctx, p):
    """Jacobian ``J[c, k]`` of the surrogate class-loss vector."""
    p, z, a = _surrogate_parts(ctx, p)
    direct = np.bincount(ctx.labels, weights=a, minlength=ctx.n_classes)
    coef = a * p[ctx.labels] / z
    cross = ctx._onehot.T @ (ctx.weights * coef[:, None])
    return (cross - np.diag(direct)) / ctx.counts[:, None]


# -- classification calibration ----------------------------------------------


def calibration_check(p):
    """Classification-calibration margins of ``1 - <p, z>`` at ``p``.

    Returns ``(constrained, unconstrained, bound)`` where ``constrained`` is the
    infimum of ``1 - <p, z>`` over ``z`` in the simplex whose argmax class has
    ``p[y'] < max(p)``, computed exactly by enumerating the vertices of each
    region ``{z : z[y'] >= z[j]}`` (uniform vectors on subsets containing
    ``y'``); ``unconstrained = 1 - max(p)``; and ``bound`` is the analytic lower
    bound ``1 - max(p) + min_{y'} (max(p) - p[y']) / M``.
    """
    p = as_simplex(p)
    m = p.size
    top = float(p.max())
    rivals = [y for y in range(m) if p[y] < top]
    if not rivals:
        return float("inf"), 1.0 - top, float("inf")
    best = float("inf")
    for y in rivals:
        others = [j for j in range(m) if j != y]
        for r in range(m):
            for extra in combinations(others, r):
                s = (y,) + extra
                best = min(best, 1.0 - float(p[list(s)].mean()))
    bound = 1.0 - top + min(top - p[y] for y in rivals) / m
    return best, 1.0 - top, float(bound)

"""Online re-weighting adapters and the fixed baselines.

Every adapter exposes the re-weighting vector ``p`` used to classify the next
sample and advances with :meth:`Adapter.step`, which receives *only* the base
classifier's predicted label for that sample. True labels never cross this
interface.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AdapterFault, InvalidInputError
from .estimation import (
    FiniteDiffConfig,
    FiniteDiffStats,
    class_losses_batch,
    estimate_marginal,
    finite_diff_jacobian,
    paired_difference,
    surrogate_gradient,
    surrogate_jacobian,
)
from .simplex import as_simplex, project_to_simplex, sample_uniform_simplex

GRADIENT_KINDS = ("surrogate", "finite-diff")


class Adapter:
    """Base class: holds ``p_t`` and the step counter ``t``."""

    name = "adapter"

    def __init__(self, initial):
        self._p = as_simplex(initial)
        self.t = 0
        self.metadata = {}

    @property
    def p(self):
        return self._p

    def _expose(self, p):
        p = np.asarray(p, dtype=float)
        p.flags.writeable = False
        self._p = p

    def step(self, predicted_label):
        raise NotImplementedError

    def trajectory(self, predicted_labels):
        """Run over a stream of predicted labels; row ``t`` is the ``p`` used at step ``t``."""
        labels = np.asarray(predicted_labels, dtype=np.int64)
        out = np.empty((labels.size, self._p.size))
        for n, i in enumerate(labels):
            out[n] = self._p
            self.step(i)
        return out


class FixedAdapter(Adapter):
    """Never updates. With ``p = q0`` this is the unadapted base classifier."""

    name = "fixed"

    def __init__(self, p):
        super().__init__(p)

    def step(self, predicted_label):
        self.t += 1

    def trajectory(self, predicted_labels):
        n = np.asarray(predicted_labels).size
        self.t += n
        return np.broadcast_to(self._p, (n, self._p.size)).copy()


class FTHAdapter(Adapter):
    """Follow The History: ``p_{t+1}`` is the projected mean of all marginal estimates.

    The raw (unprojected) running sum is kept so the averaged estimate stays
    unbiased; only the exposed vector is projected.
    """

    name = "fth"

    def __init__(self, ctx):
        super().__init__(ctx.prior)
        self.ctx = ctx
        self._sum = np.zeros(ctx.n_classes)

    @property
    def raw_mean(self):
        return self._sum / self.t if self.t else np.array(self.ctx.prior)

    def _advance(self, predicted_label):
        self._sum = self._sum + estimate_marginal(self.ctx, predicted_label)
        self.t += 1
        return self._sum / self.t

    def step(self, predicted_label):
        self._expose(project_to_simplex(self._advance(predicted_label)))

    def trajectory(self, predicted_labels):
        return _averaging_trajectory(self, predicted_labels)


class FTFWHAdapter(Adapter):
    """Follow The Fixed Window History: projected mean of the last ``window`` estimates."""

    name = "ftfwh"

    def __init__(self, ctx, window):
        if int(window) < 1:
            raise InvalidInputError("window must be >= 1")
        super().__init__(ctx.prior)
        self.ctx = ctx
        self.window = int(window)
        self._buf = np.zeros((self.window, ctx.n_classes))
        self._sum = np.zeros(ctx.n_classes)

    def _advance(self, predicted_label):
        est = estimate_marginal(self.ctx, predicted_label)
        slot = self.t % self.window
        if self.t < self.window:
            self._sum = self._sum + est
        else:
            self._sum = self._sum - self._buf[slot] + est
        self._buf[slot] = est
        self.t += 1
        if self.t > self.window and slot == self.window - 1:
            # resynchronise once per wrap to stop round-off drift
            self._sum = self._buf.sum(axis=0)
        return self._sum / min(self.t, self.window)

    def step(self, predicted_label):
        self._expose(project_to_simplex(self._advance(predicted_label)))

    def trajectory(self, predicted_labels):
        return _averaging_trajectory(self, predicted_labels)


def _averaging_trajectory(adapter, predicted_labels):
    """Run an averaging adapter, projecting all raw averages in one batch.

    Row-wise projection is bit-identical to projecting each row alone, so
    this matches calling :meth:`Adapter.step` repeatedly.
    """
    labels = np.asarray(predicted_labels, dtype=np.int64)
    n = labels.size
    out = np.empty((n, adapter.p.size))
    if n == 0:
        return out
    out[0] = adapter.p
    raw = np.empty((n, adapter.p.size))
    for k, i in enumerate(labels):
        raw[k] = adapter._advance(i)
    projected = project_to_simplex(raw)
    out[1:] = projected[:-1]
    adapter._expose(projected[-1].copy())
    return out


def ogd_update(p, gradient, lr):
    """One projected gradient step ``Proj(p - lr * gradient)``."""
    return project_to_simplex(np.asarray(p, dtype=float) - lr * np.asarray(gradient, dtype=float))


def default_learning_rate(horizon, lipschitz):
    """``sqrt(2 / T) / L``; a zero Lipschitz constant means gradients vanish, so 1.0 is used."""
    if horizon < 1:
        raise InvalidInputError("horizon must be >= 1")
    if lipschitz <= 0:
        return 1.0
    return math.sqrt(2.0 / horizon) / lipschitz


@dataclass(frozen=True)
class OgdConfig:
    horizon: int
    lr: float | None = None
    gradient: str = "surrogate"
    fd: FiniteDiffConfig = field(default_factory=FiniteDiffConfig)
    lipschitz_dirs: int = 100

    def __post_init__(self):
        if self.horizon < 1:
            raise InvalidInputError("horizon must be >= 1")
        if self.lr is not None and not self.lr > 0:
            raise InvalidInputError("learning rate must be positive")
        if self.gradient not in GRADIENT_KINDS:
            raise InvalidInputError(f"gradient must be one of {GRADIENT_KINDS}")


class OGDAdapter(Adapter):
    """Online gradient descent on the estimated loss, projected onto the simplex.

    ``gradient="surrogate"`` differentiates the smooth surrogate loss exactly;
    ``"finite-diff"`` applies the central-difference stencil to the 0-1 loss.
    The marginal estimate entering the gradient is kept raw.
    """

    name = "ogd"

    def __init__(self, ctx, cfg, rng=None, lipschitz=None):
        super().__init__(ctx.prior)
        self.ctx = ctx
        self.cfg = cfg
        self.rng = rng
        self.fd_stats = FiniteDiffStats()
        if cfg.lr is not None:
            self.lipschitz = float("nan") if lipschitz is None else float(lipschitz)
            self.lr = float(cfg.lr)
        else:
            if lipschitz is None:
                lipschitz = estimate_lipschitz(
                    ctx, cfg.gradient, cfg.lipschitz_dirs, rng, fd=cfg.fd
                )
            self.lipschitz = float(lipschitz)
            self.lr = default_learning_rate(cfg.horizon, self.lipschitz)
        self.metadata.update(lipschitz=self.lipschitz, eta=self.lr)

    def gradient(self, p, q):
        if self.cfg.gradient == "surrogate":
            return surrogate_gradient(self.ctx, p, q)
        jac = finite_diff_jacobian(self.ctx, p, self.cfg.fd, self.rng, "zero-one", self.fd_stats)
        return jac.T @ q

    def step(self, predicted_label):
        q_hat = estimate_marginal(self.ctx, predicted_label)
        g = self.gradient(self._p, q_hat)
        if not np.all(np.isfinite(g)):
            raise AdapterFault(f"non-finite gradient at step {self.t + 1}: {g}")
        self._expose(ogd_update(self._p, g, self.lr))
        self.t += 1
        self.metadata["clamped"] = self.fd_stats.clamped


def loss_jacobian(ctx, p, gradient="surrogate", fd=FiniteDiffConfig(), rng=None, stats=None):
    """Jacobian of the class-loss vector: exact for the surrogate, stencil for 0-1."""
    if gradient == "surrogate":
        return surrogate_jacobian(ctx, p)
    if gradient == "finite-diff":
        return finite_diff_jacobian(ctx, p, fd, rng, "zero-one", stats)
    raise InvalidInputError(f"unknown gradient kind {gradient!r}")


def estimate_lipschitz(ctx, gradient="surrogate", n_dirs=100, rng=None, fd=FiniteDiffConfig(), targets="estimates"):
    """Largest gradient norm over ``n_dirs`` uniformly drawn re-weighting vectors.

    ``targets="estimates"`` maximises over the marginal estimates
    ``(C^T)^-1 e_i`` (the constant of the OGD bound); ``"simplex"`` maximises
    over true marginals, where the vertices attain the supremum because the
    gradient norm is convex in ``q``.
    """
    if rng is None:
        raise InvalidInputError("estimate_lipschitz needs a seeded generator")
    if targets == "estimates":
        qs = ctx.estimates
    elif targets == "simplex":
        qs = np.eye(ctx.n_classes)
    else:
        raise InvalidInputError(f"unknown targets {targets!r}")
    best = 0.0
    for p in sample_uniform_simplex(rng, ctx.n_classes, size=int(n_dirs)):
        jac = loss_jacobian(ctx, p, gradient, fd, rng)
        grads = qs @ jac
        best = max(best, float(np.max(np.linalg.norm(grads, axis=1))))
    if not math.isfinite(best):
        raise AdapterFault("non-finite gradient while estimating the Lipschitz constant")
    return best


@dataclass(frozen=True)
class OfcResult:
    p: np.ndarray
    loss: float
    converged: bool
    spread: float
    candidates: int


def ofc_solve(
    ctx,
    mean_marginal,
    rng=None,
    n_starts=10,
    iterations=500,
    step=0.1,
    kind=None,
    fd=FiniteDiffConfig(),
    tol=1e-3,
    significance=None,
):
    """Best fixed re-weighting for the marginal ``mean_marginal``.

    Multi-start projected gradient descent: starts at ``q0``, at
    ``mean_marginal`` and at ``n_starts - 2`` uniform draws. Each run takes
    normalised steps of length ``step / sqrt(k + 1)`` and returns the average of
    its second-half iterates. Among the start points and these averages the one
    with the lowest loss wins. ``converged`` reports whether the descended
    candidates agree in loss to ``tol``.

    With ``significance`` set to a z-value, ``mean_marginal`` itself is kept
    unless the winner beats it by more than that many paired standard errors
    on the hold-out set; this separates real optima from hold-out noise.
    """
    kind = ctx.kind if kind is None else kind
    target = as_simplex(mean_marginal)
    starts = [np.array(ctx.prior), np.array(target)][: max(int(n_starts), 1)]
    if n_starts > 2:
        if rng is None:
            raise InvalidInputError("random starts need a seeded generator")
        starts += list(sample_uniform_simplex(rng, ctx.n_classes, size=n_starts - 2))
    gradient = "surrogate" if kind == "surrogate" else "finite-diff"
    finals = []
    for start in starts:
        p = start
        acc = np.zeros_like(p)
        n_acc = 0
        half = iterations // 2
        for k in range(iterations):
            g = target @ loss_jacobian(ctx, p, gradient, fd, rng)
            norm = float(np.linalg.norm(g))
            if not math.isfinite(norm):
                raise AdapterFault("non-finite gradient in the fixed-classifier solver")
            if norm > 0:
                p = project_to_simplex(p - (step / math.sqrt(k + 1)) * g / norm)
            if k >= half:
                acc += p
                n_acc += 1
        finals.append(acc / n_acc if n_acc else p)
    candidates = np.vstack(starts + finals)
    losses = class_losses_batch(ctx, candidates, kind) @ target
    best = int(np.argmin(losses))
    if significance is not None and len(starts) > 1 and best != 1:
        diff, se = paired_difference(ctx, candidates[best], candidates[1], target, kind)
        if not diff < -significance * se:
            best = 1
    final_losses = losses[len(starts) :]
    spread = float(final_losses.max() - final_losses.min())
    p_best = project_to_simplex(candidates[best])
    p_best.flags.writeable = False
    return OfcResult(p_best, float(losses[best]), spread <= tol, spread, len(candidates))

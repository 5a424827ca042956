"""Probability-simplex arithmetic.

Vectors are plain ``numpy`` arrays. :func:`as_simplex` validates (and, for tiny
round-off, renormalises) a probability vector and returns a read-only copy;
:func:`as_raw` does the same for unconstrained finite vectors.

Labels are 0-based everywhere inside the library. Files on disk use 1-based
labels and are converted at the I/O boundary.
"""

from __future__ import annotations

import zlib

import numpy as np

from .errors import InvalidInputError

#: Absolute tolerance on ``sum(v) == 1`` for a valid simplex vector.
SUM_TOL = 1e-9
#: Deviations up to this size are silently renormalised away.
RENORM_TOL = 1e-6
# Output of the projection is accepted unchanged by a second projection.
_ON_SIMPLEX_TOL = 1e-12


def _frozen(a):
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


def as_raw(values):
    """Return ``values`` as a read-only 1-d float array, rejecting NaN/inf."""
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise InvalidInputError(f"expected a non-empty 1-d vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("vector has non-finite entries")
    return _frozen(v)


def as_simplex(values):
    """Validate a probability vector.

    Entries must be non-negative (values above ``-1e-12`` are clipped to 0) and
    sum to one. A sum within ``RENORM_TOL`` of one is renormalised; anything
    further off raises :class:`InvalidInputError`.
    """
    v = np.array(as_raw(values))
    if np.any(v < -_ON_SIMPLEX_TOL):
        raise InvalidInputError(f"negative probability {v.min():.3g}")
    np.clip(v, 0.0, None, out=v)
    s = v.sum()
    if abs(s - 1.0) > RENORM_TOL:
        raise InvalidInputError(f"probabilities sum to {s:.12g}, not 1")
    if abs(s - 1.0) > 0.0:
        v = v / s
    if np.any(v > 1.0):
        v = np.minimum(v, 1.0)
    return _frozen(v)


def is_simplex(values, tol=SUM_TOL):
    v = np.asarray(values, dtype=float)
    return bool(np.all(np.isfinite(v)) and np.all(v >= 0) and abs(v.sum() - 1.0) <= tol)


def project_to_simplex(v):
    """Euclidean projection onto the probability simplex.

    Sort-and-threshold algorithm, O(M log M) per vector. Works row-wise on a
    2-d array with bit-identical results to projecting each row separately.

    Parameters
    ----------
    v : array_like, shape (M,) or (n, M)
        Finite vector(s) to project.

    Returns
    -------
    numpy.ndarray
        The unique minimiser of ``||w - v||_2`` over the simplex. Inputs already
        on the simplex (to within 1e-12 in the sum) are returned unchanged, so
        the operation is exactly idempotent.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim not in (1, 2) or v.shape[-1] == 0:
        raise InvalidInputError(f"cannot project array of shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("cannot project a vector with non-finite entries")
    m = v.shape[-1]
    # the projection ignores a common shift; anchoring the top entry at 0 keeps
    # the threshold well conditioned for huge inputs
    shifted = v - v.max(axis=-1, keepdims=True)
    u = -np.sort(-shifted, axis=-1)
    css = np.cumsum(u, axis=-1)
    k = np.arange(1, m + 1, dtype=float)
    # the support condition holds on a prefix of the sorted entries
    rho = np.count_nonzero(u * k > css - 1.0, axis=-1, keepdims=True)
    theta = (np.take_along_axis(css, rho - 1, axis=-1) - 1.0) / rho
    w = np.maximum(shifted - theta, 0.0)
    on = np.all(v >= 0.0, axis=-1, keepdims=True) & (
        np.abs(v.sum(axis=-1, keepdims=True) - 1.0) <= _ON_SIMPLEX_TOL
    )
    return np.where(on, v, w)


def sample_uniform_simplex(rng, n_classes, size=None):
    """Draw from the uniform (Dirichlet(1, ..., 1)) law on the simplex."""
    if int(n_classes) < 1:
        raise InvalidInputError("n_classes must be >= 1")
    n_classes = int(n_classes)
    return rng.dirichlet(np.ones(n_classes), size=size)


def argmax_label(v):
    """Index of the largest entry; ties go to the lowest index."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise InvalidInputError("argmax_label expects a non-empty 1-d vector")
    return int(np.argmax(v))


def one_hot(i, n_classes):
    e = np.zeros(n_classes)
    e[i] = 1.0
    return e


def _key_to_int(key):
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise InvalidInputError("seed keys must be non-negative")
        return int(key)
    return zlib.crc32(str(key).encode("utf-8"))


def make_rng(seed, *keys):
    """Seeded generator for the sub-stream identified by ``keys``.

    Keys may be strings or non-negative integers; strings are hashed with
    CRC-32 so the derivation is stable across processes and platforms.
    Distinct key paths give statistically independent streams.
    """
    entropy = [_key_to_int(seed)] + [_key_to_int(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))

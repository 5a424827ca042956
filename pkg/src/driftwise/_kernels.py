"""Compiled inner loops for the hold-out 0-1 loss.

Both kernels count, per class, the hold-out samples whose re-weighted argmax
(lowest index on ties) equals the true label. ``weights`` holds
``P_f0(x)[y] / q0[y]`` for every sample; re-weighting by ``p`` multiplies each
row element-wise, so the normaliser never matters for the argmax.
"""

from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True)
def class_correct_counts(weights, labels, points):
    n, m = weights.shape
    b = points.shape[0]
    out = np.zeros((b, m))
    for s in range(n):
        c = labels[s]
        for k in range(b):
            best = 0
            best_v = weights[s, 0] * points[k, 0]
            for j in range(1, m):
                v = weights[s, j] * points[k, j]
                if v > best_v:
                    best_v = v
                    best = j
            if best == c:
                out[k, c] += 1.0
    return out


@numba.njit(cache=True)
def _coord_slots(coords, m):
    """Perturbation indices grouped by coordinate: ``order[starts[i]:starts[i + 1]]``."""
    starts = np.zeros(m + 1, dtype=np.int64)
    for k in range(coords.shape[0]):
        starts[coords[k] + 1] += 1
    for i in range(m):
        starts[i + 1] += starts[i]
    fill = starts[:-1].copy()
    order = np.empty(coords.shape[0], dtype=np.int64)
    for k in range(coords.shape[0]):
        i = coords[k]
        order[fill[i]] = k
        fill[i] += 1
    return order, starts


@numba.njit(cache=True)
def box_screen(weights, labels, lo, hi):
    """Split samples by their outcome over every single-coordinate move inside ``[lo, hi]``.

    A sample is settled when its own score beats every rival across the box,
    and lost when two rivals beat it across the box (a move changes only one
    of them). Returns the indices of the remaining samples and the per-class
    count of settled ones.
    """
    n, m = weights.shape
    keep = np.empty(n, dtype=np.int64)
    settled = np.zeros(m)
    n_keep = 0
    for s in range(n):
        c = labels[s]
        rmax = 0.0
        r1 = -1.0
        r2 = -1.0
        for j in range(m):
            if j != c:
                rmax = max(rmax, weights[s, j] * hi[j])
                v = weights[s, j] * lo[j]
                if v > r1:
                    r2 = r1
                    r1 = v
                elif v > r2:
                    r2 = v
        if weights[s, c] * lo[c] > rmax:
            settled[c] += 1.0
        elif not weights[s, c] * hi[c] < r2:
            keep[n_keep] = s
            n_keep += 1
    return keep[:n_keep], settled


@numba.njit(cache=True)
def perturbed_subset(weights, labels, base, coords, values, samples, settled):
    """Counts for ``base`` with coordinate ``coords[k]`` replaced by ``values[k]``.

    Only ``samples`` are examined; ``settled[c]`` samples of class ``c`` are
    known to be correct at every perturbed point. Per sample, only moves of
    the true class, its strongest rival and any rival that can reach the
    true class's score are evaluated; every other move leaves the outcome at
    the unperturbed one.
    """
    m = weights.shape[1]
    b = coords.shape[0]
    lo = base.copy()
    hi = base.copy()
    for k in range(b):
        i = coords[k]
        if values[k] < lo[i]:
            lo[i] = values[k]
        if values[k] > hi[i]:
            hi[i] = values[k]
    order, starts = _coord_slots(coords, m)
    out = np.zeros((b, m))
    always = settled.copy()
    for s in samples:
        c = labels[s]
        rmax = 0.0
        for j in range(m):
            if j != c:
                rmax = max(rmax, weights[s, j] * hi[j])
        if weights[s, c] * lo[c] > rmax:
            always[c] += 1.0
            continue
        own = weights[s, c] * base[c]
        v1 = 0.0
        i1 = -1
        v2 = 0.0
        i2 = -1
        for j in range(m):
            if j == c:
                continue
            v = weights[s, j] * base[j]
            if i1 < 0 or v > v1:
                v2 = v1
                i2 = i1
                v1 = v
                i1 = j
            elif i2 < 0 or v > v2:
                v2 = v
                i2 = j
        if i2 >= 0 and weights[s, c] * hi[c] < v2:
            continue
        base_ok = i1 < 0 or own > v1 or (own == v1 and c < i1)
        shift = 0.0
        if base_ok:
            always[c] += 1.0
            shift = 1.0
        for i in range(m):
            if i != c and i != i1 and not (base_ok and weights[s, i] * hi[i] >= own):
                continue
            for slot in range(starts[i], starts[i + 1]):
                k = order[slot]
                nv = weights[s, i] * values[k]
                if i == c:
                    o = nv
                    rv = v1
                    ri = i1
                else:
                    o = own
                    if i1 == i:
                        rv = v2
                        ri = i2
                    else:
                        rv = v1
                        ri = i1
                    if ri < 0 or nv > rv or (nv == rv and i < ri):
                        rv = nv
                        ri = i
                ok = ri < 0 or o > rv or (o == rv and c < ri)
                out[k, c] += (1.0 if ok else 0.0) - shift
    for k in range(b):
        for c in range(m):
            out[k, c] += always[c]
    return out


def perturbed_class_correct(weights, labels, base, coords, values):
    """Counts for ``base`` with coordinate ``coords[k]`` replaced by ``values[k]``, all samples."""
    samples = np.arange(weights.shape[0], dtype=np.int64)
    return perturbed_subset(weights, labels, base, coords, values, samples, np.zeros(weights.shape[1]))

"""Shared reader/writer for the label + probability CSV layouts."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError

PROB_ROW_TOL = 1e-6


def _parse_int(text, what, line, path):
    try:
        return int(text.strip())
    except ValueError:
        raise ParseError(f"{what} {text!r} is not an integer", line, path) from None


def read_prob_csv(path, leading):
    """Read ``<leading...>,p1,...,pM`` rows.

    ``leading`` names the integer columns before the probabilities, e.g.
    ``("label",)`` or ``("t", "label")``. Returns ``(ints, probs)`` with
    ``ints`` of shape (n, len(leading)) holding file values verbatim.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty file", 1, path) from None
        n_lead = len(leading)
        if tuple(header[:n_lead]) != tuple(leading):
            raise ParseError(
                f"header must start with {','.join(leading)}, got {','.join(header[:n_lead])}",
                1,
                path,
            )
        prob_cols = header[n_lead:]
        m = len(prob_cols)
        if m == 0 or prob_cols != [f"p{j}" for j in range(1, m + 1)]:
            raise ParseError("probability columns must be p1,...,pM", 1, path)
        ints, probs = [], []
        for line, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != n_lead + m:
                raise ParseError(
                    f"expected {n_lead + m} fields (M={m}), found {len(row)}", line, path
                )
            ints.append([_parse_int(row[k], leading[k], line, path) for k in range(n_lead)])
            try:
                vec = [float(x) for x in row[n_lead:]]
            except ValueError:
                raise ParseError("probability is not a decimal number", line, path) from None
            if not all(math.isfinite(x) for x in vec):
                raise ValidationError("non-finite probability", line, path)
            if min(vec) < 0.0 or abs(math.fsum(vec) - 1.0) > PROB_ROW_TOL:
                raise ValidationError(
                    f"probabilities are not on the simplex (sum {math.fsum(vec):.9g})", line, path
                )
            probs.append(vec)
    ints = np.asarray(ints, dtype=np.int64).reshape(-1, len(leading))
    probs = np.asarray(probs, dtype=float).reshape(-1, m)
    return ints, probs


def write_prob_csv(path, leading, ints, probs):
    path = Path(path)
    m = probs.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(leading) + [f"p{j}" for j in range(1, m + 1)])
        for lead, vec in zip(ints, probs):
            w.writerow([int(x) for x in lead] + [repr(float(x)) for x in vec])

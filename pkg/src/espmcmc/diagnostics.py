"""Integrated autocorrelation time by overlapping batch means, and chain summaries."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InputError

# OBM window sizes used for the three bundled experiments
BATCH_SIZES = {"nonlinear": 300, "sv": 213, "binreg": 309}


def iact_obm(series, batch_size: int) -> float:
    """IACT estimate ``Var_OBM / s^2``.

    With batch means ``B_j`` over the ``n - b + 1`` windows of length ``b``,
    ``Var_OBM = n b / ((n - b)(n - b + 1)) * sum_j (B_j - mean)^2`` estimates
    ``n Var(mean)``. The result is not floored.

    Raises
    ------
    InputError
        If ``n <= 2 b`` or the series is constant.
    """
    y = np.asarray(series, dtype=float).ravel()
    n, b = y.size, int(batch_size)
    if b < 1:
        raise InputError("batch size must be >= 1")
    if n <= 2 * b:
        raise InputError(f"series length {n} must exceed twice the batch size {b}")
    ybar = y.mean()
    s2 = y.var(ddof=1)
    if not s2 > 0:
        raise InputError("constant series: variance is zero, IACT undefined")
    c = np.concatenate([[0.0], np.cumsum(y - ybar)])
    bm = (c[b:] - c[:-b]) / b
    var_obm = n * b / ((n - b) * (n - b + 1)) * float(bm @ bm)
    return var_obm / s2


@dataclass(frozen=True)
class ChainSummary:
    quantity: str
    mean: float
    sd: float
    iact: float
    ess: float
    batch_size: int


def summarize(samples: np.ndarray, names, batch_size: int) -> list[ChainSummary]:
    """One summary per column of ``samples`` (shape ``(n, k)``)."""
    arr = np.asarray(samples, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    out = []
    for j, name in enumerate(names):
        col = arr[:, j]
        tau = iact_obm(col, batch_size)
        out.append(
            ChainSummary(
                quantity=str(name),
                mean=float(col.mean()),
                sd=float(col.std(ddof=1)),
                iact=tau,
                ess=col.size / tau,
                batch_size=int(batch_size),
            )
        )
    return out


def max_iact(summaries) -> float:
    return max(s.iact for s in summaries)


def summaries_to_json(summaries) -> str:
    return json.dumps([asdict(s) for s in summaries], indent=2)

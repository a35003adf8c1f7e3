"""Trace-set comparison statistics: Pearson and Spearman coefficients.

Used as self-consistency checks: same-input sets must correlate perfectly,
distinct-random-input sets must not correlate (false-positive control).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .cpa import pearson
from .power import TraceSet

REDUCTIONS = ("energy", "max")


def pcc(x, y) -> float:
    """Pearson product-moment correlation coefficient."""
    return pearson(x, y)


def scc(x, y) -> float:
    """Spearman rank correlation: Pearson of average ranks (ties averaged)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return pearson(rankdata(x), rankdata(y))


@dataclass(frozen=True)
class CorrelationReport:
    pcc: float
    scc: float
    n_points: int
    reduction: str

    def to_dict(self) -> dict:
        return {
            "pcc": self.pcc,
            "scc": self.scc,
            "n_points": self.n_points,
            "reduction": self.reduction,
        }


def reduce_traces(ts: TraceSet, reduction: str = "energy") -> np.ndarray:
    """Scalar per trace: total energy (sum over cycles) or per-trace maximum."""
    if reduction == "energy":
        return ts.values.sum(axis=1)
    if reduction == "max":
        return ts.values.max(axis=1)
    raise ValueError(f"unknown reduction: {reduction!r} (use one of {REDUCTIONS})")


def compare_trace_sets(a: TraceSet, b: TraceSet, reduction: str = "energy") -> CorrelationReport:
    """Correlate two trace sets after reducing each trace to one scalar.

    The sets must contain the same number of traces in the same sample
    order; lengths may differ (the reduction absorbs that).
    """
    if a.n_traces != b.n_traces:
        raise ValueError(f"trace counts differ: {a.n_traces} vs {b.n_traces}")
    ra = reduce_traces(a, reduction)
    rb = reduce_traces(b, reduction)
    return CorrelationReport(
        pcc=pcc(ra, rb), scc=scc(ra, rb), n_points=a.n_traces, reduction=reduction
    )

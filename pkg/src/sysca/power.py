"""Input-dependent dynamic power model (the "resource handler").

Power expenses are dimensionless integer unit costs. A PE's expense per cycle
is the sum of its MAC expense and its register-write expense:

  * the multiplier is decomposed into shift-and-add 18-bit ripple-carry
    additions, each full adder charged per the 8-row binary-adder expense
    table (bit-flip cost model);
  * the accumulator add is one more 18-bit ripple add;
  * the register write costs the Hamming distance between old and new value.

Scalar functions define the contract; the *_vec variants are numpy
equivalents used for bulk trace generation and are tested against the
scalar path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .systolic import (
    ACC_MASK,
    ACC_BITS,
    WeightMatrix,
    ActivityEvent,
    load_weights,
    stream_inference,
    trace_length,
)

# Binary adder expense table, indexed by (a<<2)|(b<<1)|cin.
# Columns: sum bit, carry-out bit, state expense, computational effort CE,
# total per-evaluation expense PM = state + CE.
ADDER_TABLE = {
    (0, 0, 0): (0, 0, 0, 0, 0),
    (1, 0, 0): (1, 0, 0, 1, 1),
    (0, 1, 0): (1, 0, 0, 1, 1),
    (1, 1, 0): (0, 1, 1, 2, 3),
    (0, 0, 1): (1, 0, 1, 0, 1),
    (1, 0, 1): (0, 1, 0, 1, 1),
    (0, 1, 1): (0, 1, 0, 1, 1),
    (1, 1, 1): (1, 1, 0, 2, 2),
}

# Flat lookup arrays for the vectorized path, index = (a<<2)|(b<<1)|cin.
_PM_FLAT = np.zeros(8, dtype=np.int64)
_SUM_FLAT = np.zeros(8, dtype=np.int64)
_COUT_FLAT = np.zeros(8, dtype=np.int64)
for (_a, _b, _c), (_s, _co, _st, _ce, _pm) in ADDER_TABLE.items():
    _idx = (_a << 2) | (_b << 1) | _c
    _PM_FLAT[_idx] = _pm
    _SUM_FLAT[_idx] = _s
    _COUT_FLAT[_idx] = _co


class InconsistentEventError(ValueError):
    """Raised when an activity event violates the MAC arithmetic relation."""


def full_adder_expense(a: int, b: int, cin: int):
    """One full-adder evaluation: returns (sum, cout, pm)."""
    s, cout, _state, _ce, pm = ADDER_TABLE[(a, b, cin)]
    return s, cout, pm


def ripple_add_expense(x: int, y: int, width: int = ACC_BITS):
    """Ripple-carry addition of two width-bit words.

    Returns (sum mod 2^width, total expense over the chained full adders).
    Carry-in of bit 0 is 0; the final carry-out is discarded (wrap-around).
    """
    if width > ACC_BITS:
        raise ValueError(f"width must be <= {ACC_BITS}")
    carry = 0
    total = 0
    result = 0
    for bit in range(width):
        a = (x >> bit) & 1
        b = (y >> bit) & 1
        s, carry, pm = full_adder_expense(a, b, carry)
        result |= s << bit
        total += pm
    return result, total


def multiply_expense(a: int, w: int):
    """Unsigned shift-and-add multiplier expense.

    One 18-bit ripple add per set bit of `a`, adding w << bit into a running
    accumulator that starts at 0. Returns (product mod 2^18, expense).
    """
    acc = 0
    total = 0
    for bit in range(8):
        if (a >> bit) & 1:
            acc, pm = ripple_add_expense(acc, (w << bit) & ACC_MASK)
            total += pm
    return acc, total


def register_write_expense(old: int, new: int) -> int:
    """Bit-switching cost of a register write: popcount(old XOR new)."""
    return int(bin((old ^ new) & ACC_MASK).count("1"))


def pe_cycle_expense(e: ActivityEvent) -> int:
    """Total PE expense for one firing: MAC expense plus register expense."""
    if not e.is_consistent():
        raise InconsistentEventError(f"inconsistent activity event: {e}")
    prod, pm_mult = multiply_expense(e.input, e.weight)
    _, pm_add = ripple_add_expense(prod, e.acc_in)
    pm_reg = register_write_expense(e.reg_old, e.reg_new)
    return pm_mult + pm_add + pm_reg


# ---------------------------------------------------------------------------
# Vectorized kernels
# ---------------------------------------------------------------------------

def ripple_add_expense_vec(x, y, width: int = ACC_BITS):
    """Elementwise ripple_add_expense over int64 arrays."""
    x = np.asarray(x, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    carry = np.zeros(np.broadcast(x, y).shape, dtype=np.int64)
    total = np.zeros_like(carry)
    result = np.zeros_like(carry)
    for bit in range(width):
        a = (x >> bit) & 1
        b = (y >> bit) & 1
        idx = (a << 2) | (b << 1) | carry
        total += _PM_FLAT[idx]
        result |= _SUM_FLAT[idx] << bit
        carry = _COUT_FLAT[idx]
    return result, total


def multiply_expense_vec(a, w):
    """Elementwise multiply_expense over int64 arrays (broadcastable)."""
    a = np.asarray(a, dtype=np.int64)
    w = np.asarray(w, dtype=np.int64)
    shape = np.broadcast(a, w).shape
    acc = np.zeros(shape, dtype=np.int64)
    total = np.zeros(shape, dtype=np.int64)
    for bit in range(8):
        active = ((a >> bit) & 1).astype(bool)
        addend = (w << bit) & ACC_MASK
        s, pm = ripple_add_expense_vec(acc, addend)
        acc = np.where(active, s, acc)
        total += np.where(active, pm, 0)
    return acc, total


def popcount(x) -> np.ndarray:
    return np.bitwise_count(np.asarray(x, dtype=np.uint64)).astype(np.int64)


# ---------------------------------------------------------------------------
# Traces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PowerTrace:
    """Per-cycle expense vector for one input sample."""

    values: np.ndarray
    sample_id: int = 0


@dataclass
class TraceSet:
    """N power traces of equal length T plus experiment metadata."""

    values: np.ndarray  # shape (N, T), float64
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1:
            raise ValueError(f"trace array must be (N>=1, T), got shape {v.shape}")
        self.values = v

    @property
    def n_traces(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]

    def trace(self, i: int) -> PowerTrace:
        return PowerTrace(self.values[i], sample_id=i)

    def samples(self) -> np.ndarray:
        """Attacker-visible input samples recorded in the metadata."""
        s = self.meta.get("samples")
        if s is None:
            raise KeyError("trace set metadata carries no input samples")
        return np.asarray(s, dtype=np.int64)

    def meta_json(self) -> str:
        return json.dumps(self.meta, sort_keys=True)


def trace_for_sample(events, n: int) -> np.ndarray:
    """Aggregate per-PE expenses into a per-cycle trace of length 2n - 1."""
    T = trace_length(n)
    values = np.zeros(T, dtype=np.float64)
    for e in events:
        values[e.cycle - 1] += pe_cycle_expense(e)
    return values


def batch_traces(weights: WeightMatrix, samples) -> np.ndarray:
    """Vectorized noiseless traces for a batch of samples, shape (N, 2n-1).

    Registers are reset before each sample (each trace starts from a
    quiescent array), so the register expense equals the Hamming weight of
    the new value.
    """
    n = weights.n
    a = np.asarray(samples, dtype=np.int64)
    if a.ndim != 2 or a.shape[1] != n:
        raise ValueError(f"samples must be (N, {n}), got shape {a.shape}")
    return batch_traces_per_class(a, np.broadcast_to(weights.values, (a.shape[0], n, n)))


def batch_traces_per_class(samples: np.ndarray, weights_per_sample: np.ndarray) -> np.ndarray:
    """As batch_traces, but with a (possibly different) weight matrix per sample.

    weights_per_sample has shape (N, n, n); used by template profiling where
    the target PE weight varies by class.
    """
    a = np.asarray(samples, dtype=np.int64)
    w = np.asarray(weights_per_sample, dtype=np.int64)
    N, n = a.shape
    T = trace_length(n)
    trace = np.zeros((N, T), dtype=np.float64)
    for j in range(n):
        acc = np.zeros(N, dtype=np.int64)
        for i in range(n):
            prod, pm_mult = multiply_expense_vec(a[:, i], w[:, i, j])
            acc_out, pm_add = ripple_add_expense_vec(prod, acc)
            pm_reg = popcount(acc_out)  # reg_old = 0 after reset
            trace[:, i + j] += pm_mult + pm_add + pm_reg
            acc = acc_out
    return trace


def column_traces(samples: np.ndarray, col_weights: np.ndarray, col: int) -> np.ndarray:
    """Power contribution of a single column of the array, shape (N, 2n-1).

    col_weights is (N, n): the column's weight vector, possibly different
    per sample. Column `col` (1-based) fires at cycles col..col+n-1; all
    other cycles are zero. Power is additive across columns, so summing
    column_traces over every column reproduces batch_traces_per_class.
    """
    a = np.asarray(samples, dtype=np.int64)
    cw = np.asarray(col_weights, dtype=np.int64)
    N, n = a.shape
    if cw.shape != (N, n):
        raise ValueError(f"col_weights must be {(N, n)}, got {cw.shape}")
    trace = np.zeros((N, trace_length(n)), dtype=np.float64)
    acc = np.zeros(N, dtype=np.int64)
    for i in range(n):
        prod, pm_mult = multiply_expense_vec(a[:, i], cw[:, i])
        acc_out, pm_add = ripple_add_expense_vec(prod, acc)
        trace[:, i + col - 1] += pm_mult + pm_add + popcount(acc_out)
        acc = acc_out
    return trace


def generate_trace_set(
    weights: WeightMatrix,
    samples,
    seed=None,
    extra_meta: dict | None = None,
    store_weights: bool = False,
) -> TraceSet:
    """Noiseless trace set for the given samples, with recorded metadata.

    Deterministic given (weights, samples). The seed is recorded for
    provenance only. Weight values are stored only when store_weights is set
    (profiling sets); attack sets carry just a digest.
    """
    a = np.asarray(samples, dtype=np.int64)
    if a.size == 0:
        raise ValueError("empty sample list")
    values = batch_traces(weights, a)
    meta = {
        "n": weights.n,
        "T": trace_length(weights.n),
        "N": int(a.shape[0]),
        "seed": seed,
        "weights_digest": weights.digest(),
        "noise": None,
        "samples": a.tolist(),
    }
    if store_weights:
        meta["weights"] = weights.values.tolist()
    if extra_meta:
        meta.update(extra_meta)
    return TraceSet(values, meta)


def random_samples(n: int, count: int, seed) -> np.ndarray:
    """Uniform random 8-bit input vectors, shape (count, n)."""
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, size=(count, n), dtype=np.int64)

"""Cycle-accurate functional model of a weight-stationary systolic array.

The array is an n x n grid of processing elements (PEs). Each PE holds one
stationary 8-bit weight and performs a multiply-accumulate per input sample:
the product of its input and weight is added to the partial sum arriving from
the PE above, and the result is latched into an 18-bit register. Partial sums
flow down columns; PE(i, j) fires at cycle t = i + j - 1, so one sample
occupies a trace horizon of T = 2n - 1 cycles.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

WEIGHT_BITS = 8
ACC_BITS = 18
WEIGHT_MASK = (1 << WEIGHT_BITS) - 1
ACC_MASK = (1 << ACC_BITS) - 1


class DimensionError(ValueError):
    """Raised for malformed weight matrices, samples, or PE coordinates."""


@dataclass(frozen=True)
class WeightMatrix:
    """Secret n x n 8-bit weights, w[i][j] held by PE(i, j) (1-based)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.int64)
        if v.ndim != 2 or v.shape[0] != v.shape[1] or v.shape[0] < 1:
            raise DimensionError(f"weights must be square n>=1, got shape {v.shape}")
        if (v < 0).any() or (v > WEIGHT_MASK).any():
            raise DimensionError("weights must be 8-bit unsigned integers")
        object.__setattr__(self, "values", v)
        v.setflags(write=False)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def digest(self) -> str:
        import hashlib

        h = hashlib.sha256()
        h.update(str(self.n).encode())
        h.update(self.values.astype("<u2").tobytes())
        return h.hexdigest()

    @classmethod
    def random(cls, n: int, seed, low: int = 1, high: int = 255) -> "WeightMatrix":
        rng = np.random.default_rng(seed)
        return cls(rng.integers(low, high + 1, size=(n, n)))


def check_sample(a, n: int) -> np.ndarray:
    a = np.asarray(a, dtype=np.int64)
    if a.shape != (n,):
        raise DimensionError(f"sample must have length {n}, got shape {a.shape}")
    if (a < 0).any() or (a > WEIGHT_MASK).any():
        raise DimensionError("sample entries must be 8-bit unsigned integers")
    return a


@dataclass(frozen=True)
class ActivityEvent:
    """One PE firing: the MAC and register write performed at one cycle."""

    cycle: int
    pe: tuple  # (i, j), 1-based
    input: int
    weight: int
    acc_in: int
    acc_out: int
    reg_old: int
    reg_new: int

    def is_consistent(self) -> bool:
        return (
            self.acc_out == (self.input * self.weight + self.acc_in) & ACC_MASK
            and self.reg_new == self.acc_out
        )


@dataclass
class ArrayState:
    """Mutable array state: stationary weights plus per-PE partial-sum registers."""

    weights: WeightMatrix
    regs: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.regs is None:
            self.regs = np.zeros((self.weights.n, self.weights.n), dtype=np.int64)

    @property
    def n(self) -> int:
        return self.weights.n

    def clone(self) -> "ArrayState":
        return ArrayState(self.weights, self.regs.copy())


def load_weights(m: WeightMatrix) -> ArrayState:
    """Pre-load weights into a quiescent array (all registers zeroed)."""
    return ArrayState(m)


def fire_cycle(pe, n: int) -> int:
    """Cycle (1-based) at which PE(i, j) performs its MAC for a sample."""
    i, j = pe
    if not (1 <= i <= n and 1 <= j <= n):
        raise DimensionError(f"PE coordinates {pe} out of range for n={n}")
    return i + j - 1


def trace_length(n: int) -> int:
    return 2 * n - 1


def stream_inference(state: ArrayState, sample, reset_regs: bool = True):
    """Stream one input sample through the array.

    Returns (outputs, events): outputs[j-1] is the column-j result
    sum_i a_i * w[i][j] mod 2^18, available at cycle n + j - 1; events is the
    ordered list of all n^2 PE firings (by cycle, then coordinates).
    """
    n = state.n
    a = check_sample(sample, n)
    w = state.weights.values
    if reset_regs:
        state.regs[:] = 0
    events = []
    new_regs = np.zeros_like(state.regs)
    for j in range(1, n + 1):
        acc = 0
        for i in range(1, n + 1):
            prod_acc = (a[i - 1] * w[i - 1][j - 1] + acc) & ACC_MASK
            reg_old = int(state.regs[i - 1][j - 1])
            events.append(
                ActivityEvent(
                    cycle=fire_cycle((i, j), n),
                    pe=(i, j),
                    input=int(a[i - 1]),
                    weight=int(w[i - 1][j - 1]),
                    acc_in=int(acc),
                    acc_out=int(prod_acc),
                    reg_old=reg_old,
                    reg_new=int(prod_acc),
                )
            )
            new_regs[i - 1][j - 1] = prod_acc
            acc = int(prod_acc)
    state.regs[:] = new_regs
    events.sort(key=lambda e: (e.cycle, e.pe))
    outputs = [int(state.regs[n - 1][j]) for j in range(n)]
    return outputs, events


def reference_outputs(weights: WeightMatrix, sample) -> list:
    """Independent triple-loop matrix-vector oracle, reduced mod 2^18."""
    n = weights.n
    a = check_sample(sample, n)
    out = []
    for j in range(n):
        acc = 0
        for i in range(n):
            acc += int(a[i]) * int(weights.values[i][j])
        out.append(acc & ACC_MASK)
    return out

"""Additive measurement noise calibrated to a target SNR.

SNR is fixed as the variance ratio Var_signal / Var_noise, with Var_signal
taken across samples at the maximum-variance cycle of the clean trace set.
Noise is i.i.d. zero-mean Gaussian per estimation point. The lambda factor
predicts the attenuation of a CPA correlation under such noise:
rho' = lambda * rho, with lambda determined by the realized noise energy at
the attack point.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .power import TraceSet


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float
    seed: int
    distribution: str = "gaussian"
    target_snr: float | None = None

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.distribution != "gaussian":
            raise ValueError(f"unsupported noise distribution: {self.distribution}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSpec":
        return cls(**d)


def signal_variance(ts: TraceSet, cycle: int | None = None) -> float:
    """Across-sample variance at the attack point.

    With cycle=None the attack point defaults to the maximum-variance cycle
    (the only global choice when one set serves several targets); a
    dedicated single-target set can name its target's fire cycle instead.
    Falls back to the maximum-variance cycle if the named cycle carries no
    variation.
    """
    var = ts.values.var(axis=0)
    vmax = float(var.max())
    if vmax == 0.0:
        raise ValueError("all-constant trace set: SNR undefined")
    if cycle is not None and float(var[cycle]) > 0.0:
        return float(var[cycle])
    return vmax


def calibrate_sigma(ts: TraceSet, snr: float, cycle: int | None = None) -> float:
    """Noise sigma achieving the target variance-ratio SNR on this set."""
    if snr <= 0:
        raise ValueError("snr must be > 0")
    return float(np.sqrt(signal_variance(ts, cycle) / snr))


def add_noise(ts: TraceSet, spec: NoiseSpec) -> TraceSet:
    """Independent Gaussian perturbation of every trace point.

    Returns a new TraceSet; the input is left unmodified. Deterministic for a
    given spec seed.
    """
    rng = np.random.default_rng(spec.seed)
    noisy = ts.values + rng.normal(0.0, spec.sigma, size=ts.values.shape)
    meta = dict(ts.meta)
    meta["noise"] = spec.to_dict()
    return TraceSet(noisy, meta)


def lambda_factor(p, r) -> float:
    """Attenuation factor of the correlation coefficient under additive noise.

    p: clean per-sample power values at the attack point; r: realized noise
    values added at that point. lambda in (0, 1].
    """
    p = np.asarray(p, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if p.shape != r.shape or p.ndim != 1 or p.size < 2:
        raise ValueError("p and r must be equal-length vectors with N >= 2")
    ss_signal = float(np.sum((p - p.mean()) ** 2))
    if ss_signal == 0.0:
        raise ValueError("zero signal variance: lambda undefined")
    ss_noise = float(np.sum(r**2))
    return float(np.sqrt(ss_signal) / np.sqrt(ss_signal + ss_noise))

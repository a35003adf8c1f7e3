"""Simulated device under attack: the measurement side of the threat model.

The attacker can feed arbitrary inputs and observe per-cycle power traces,
but never reads the weights directly. Noise, when configured, is calibrated
per collected set so that the variance-ratio SNR at the maximum-variance
cycle matches the target.
"""

from __future__ import annotations

import numpy as np

from .noise import NoiseSpec, add_noise, calibrate_sigma
from .power import TraceSet, generate_trace_set
from .systolic import WeightMatrix


class SimulatedAccelerator:
    """Weight-loaded array with a chosen-input measurement interface."""

    def __init__(self, weights: WeightMatrix, target_snr: float | None = None, master_seed: int = 0):
        self.weights = weights
        self.target_snr = target_snr
        self.master_seed = int(master_seed)
        self._calls = 0

    @property
    def n(self) -> int:
        return self.weights.n

    def collect(self, samples, stage: int = 0, attack_cycle: int | None = None) -> TraceSet:
        """Measure one trace per sample; fresh noise per call, reproducible
        from the master seed and call order.

        attack_cycle pins the SNR calibration point to a specific cycle
        (used when a set is dedicated to a single target whose fire cycle is
        known); otherwise the maximum-variance cycle is used.
        """
        clean = generate_trace_set(self.weights, samples)
        self._calls += 1
        if self.target_snr is None:
            return clean
        seed = int(
            np.random.SeedSequence(
                [self.master_seed, int(stage), self._calls]
            ).generate_state(1)[0]
        )
        sigma = calibrate_sigma(clean, self.target_snr, attack_cycle)
        spec = NoiseSpec(sigma=sigma, seed=seed, target_snr=self.target_snr)
        return add_noise(clean, spec)

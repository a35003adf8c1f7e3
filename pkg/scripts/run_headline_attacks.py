#!/usr/bin/env python3
"""Noiseless CPA headline runs: input-tuned and untuned, N = 20000."""

import time

import numpy as np

from sysca.cpa import full_cpa_attack
from sysca.device import SimulatedAccelerator
from sysca.experiments import CANONICAL_WEIGHTS
from sysca.systolic import WeightMatrix


def main():
    wm = WeightMatrix(CANONICAL_WEIGHTS)
    for strategy in ("tuned", "random"):
        dev = SimulatedAccelerator(wm)
        t0 = time.time()
        res = full_cpa_attack(dev.collect, 3, strategy=strategy, n_traces=20000, seed=0)
        dt = time.time() - t0
        count = res.recovered_count(CANONICAL_WEIGHTS)
        print(f"{strategy}: {count}/9 weights in {dt:.1f}s; unresolved={res.unresolved}")
        print(np.array2string(res.recovered))


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Template-attack success rate at SNR 2.0 over 50 seeded repetitions."""

import time

from sysca.device import SimulatedAccelerator
from sysca.experiments import CANONICAL_WEIGHTS
from sysca.systolic import WeightMatrix
from sysca.template import full_template_attack


def main():
    wm = WeightMatrix(CANONICAL_WEIGHTS)
    successes = 0
    t0 = time.time()
    for rep in range(50):
        dev = SimulatedAccelerator(wm, target_snr=2.0, master_seed=rep)
        res = full_template_attack(
            dev, attack_traces=15, traces_per_class=1000, seed=rep,
            trace_reuse="per-pe",
        )
        count = res.recovered_count(CANONICAL_WEIGHTS)
        successes += count == 9
        print(f"rep {rep:2d}: {count}/9")
    print(
        f"success rate {successes}/50 = {successes / 50:.0%} "
        f"({time.time() - t0:.0f}s)"
    )


if __name__ == "__main__":
    main()

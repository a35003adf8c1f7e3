#!/usr/bin/env python3
"""Noise sweeps for both attacks plus the attenuation-law measurement.

Writes CSVs and SVG plots into the output directory (SYSCA_OUT_DIR or
./results).
"""

import os

from sysca.experiments import (
    cpa_noise_sweep,
    lambda_attenuation,
    plot_sweep,
    template_noise_sweep,
    write_lambda_csv,
    write_sweep_csv,
)

SWEEP_N_TRACES = 1500  # fixed N of the CPA threshold experiments
TEMPLATE_GRID = (4.0, 3.0, 2.0, 1.5)


def main():
    out = os.environ.get("SYSCA_OUT_DIR", "results")
    os.makedirs(out, exist_ok=True)

    cpa_points = cpa_noise_sweep(n_traces=SWEEP_N_TRACES, seed=0, refine=True)
    write_sweep_csv(cpa_points, os.path.join(out, "noise_sweep_cpa.csv"))
    plot_sweep(cpa_points, os.path.join(out, "noise_sweep_cpa.svg"))
    print("cpa:", [(p.snr, p.recovered_count) for p in cpa_points])

    tmpl_points = template_noise_sweep(seed=0, grid=TEMPLATE_GRID)
    write_sweep_csv(tmpl_points, os.path.join(out, "noise_sweep_template.csv"))
    plot_sweep(
        cpa_points + tmpl_points, os.path.join(out, "noise_sweep_combined.svg")
    )
    print("template:", [(p.snr, p.recovered_count) for p in tmpl_points])

    lam_points = lambda_attenuation(seeds=range(10))
    write_lambda_csv(lam_points, os.path.join(out, "lambda_attenuation.csv"))
    print(f"lambda: worst |rho' - lambda*rho| = {max(p.deviation for p in lam_points):.4f}")


if __name__ == "__main__":
    main()

"""Power side-channel attack simulator for a weight-stationary systolic array."""

from .systolic import (
    WeightMatrix,
    ArrayState,
    ActivityEvent,
    load_weights,
    fire_cycle,
    stream_inference,
    trace_length,
)
from .power import (
    TraceSet,
    PowerTrace,
    full_adder_expense,
    ripple_add_expense,
    multiply_expense,
    register_write_expense,
    pe_cycle_expense,
    trace_for_sample,
    generate_trace_set,
    random_samples,
)
from .noise import NoiseSpec, calibrate_sigma, add_noise, lambda_factor
from .cpa import (
    hd,
    hd_estimates,
    pearson,
    rank_candidates,
    chosen_plaintext_inputs,
    full_cpa_attack,
    CpaResult,
)
from .template import (
    Template,
    ProfilingConfig,
    select_pois,
    build_template,
    match,
    full_template_attack,
)
from .stats import pcc, scc, compare_trace_sets, CorrelationReport
from .traceio import write_trace_set, read_trace_set, export_csv
from .device import SimulatedAccelerator
from .config import ExperimentConfig
from .experiments import (
    CANONICAL_WEIGHTS,
    cpa_noise_sweep,
    template_noise_sweep,
    lambda_attenuation,
)

__version__ = "0.1.0"

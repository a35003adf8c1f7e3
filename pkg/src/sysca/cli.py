"""Command-line experiment runner.

Verbs: gen-traces, cpa, template profile, template attack, noise-sweep,
verify, report. Every run is driven by an ExperimentConfig (JSON file plus
flag overrides) and is reproducible from (config, seed): reruns write
byte-identical trace files and CSV reports.

Exit codes: 0 success, 1 attack failed (weights not recovered or check
failed), 2 configuration error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from .config import ExperimentConfig
from .cpa import chosen_plaintext_inputs, full_cpa_attack
from .device import SimulatedAccelerator
from .experiments import (
    CANONICAL_WEIGHTS,
    cpa_noise_sweep,
    lambda_attenuation,
    plot_sweep,
    read_sweep_csv,
    template_noise_sweep,
    write_lambda_csv,
    write_sweep_csv,
    _atomic_write_text,
)
from .power import random_samples
from .stats import compare_trace_sets
from .systolic import WeightMatrix
from .template import ProfilingConfig, build_template, isolated_row_inputs
from .traceio import TraceFormatError, read_trace_set, write_trace_set

EXIT_OK = 0
EXIT_ATTACK_FAILED = 1
EXIT_CONFIG = 2
EXIT_IO = 3


class ConfigError(ValueError):
    pass


def _load_config(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        try:
            cfg = ExperimentConfig.load(args.config)
        except OSError as e:
            raise ConfigError(f"cannot read config {args.config}: {e}") from e
        except (ValueError, TypeError) as e:
            raise ConfigError(f"invalid config {args.config}: {e}") from e
    else:
        cfg = ExperimentConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        overrides["out_dir"] = args.out
    if getattr(args, "snr", None) is not None:
        overrides["target_snr"] = args.snr
    if getattr(args, "traces", None) is not None:
        overrides["n_traces"] = args.traces
    if getattr(args, "tuned", None) is not None:
        overrides["strategy"] = "tuned"
    try:
        cfg = cfg.replace(**overrides) if overrides else cfg
    except (ValueError, TypeError) as e:
        raise ConfigError(str(e)) from e
    return cfg


def _secret(cfg: ExperimentConfig) -> WeightMatrix:
    if cfg.weights is not None:
        return WeightMatrix(np.asarray(cfg.weights, dtype=np.int64))
    if cfg.n == CANONICAL_WEIGHTS.shape[0]:
        return WeightMatrix(CANONICAL_WEIGHTS)
    return WeightMatrix.random(cfg.n, cfg.seed)


def _outdir(cfg: ExperimentConfig) -> str:
    os.makedirs(cfg.out_dir, exist_ok=True)
    return cfg.out_dir


def _file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        h.update(f.read())
    return h.hexdigest()


def cmd_gen_traces(args) -> int:
    cfg = _load_config(args)
    wm = _secret(cfg)
    stage = args.tuned if args.tuned is not None else cfg.n
    if cfg.strategy == "tuned":
        if not (1 <= stage <= cfg.n):
            raise ConfigError(f"--tuned stage must be in 1..{cfg.n}")
        samples = chosen_plaintext_inputs(
            stage, cfg.n, cfg.n_traces, [cfg.seed, 0xC9A, stage], cfg.input_hw
        )
    else:
        samples = random_samples(cfg.n, cfg.n_traces, [cfg.seed, 0xC9A, 0])
    dev = SimulatedAccelerator(wm, target_snr=cfg.target_snr, master_seed=cfg.seed)
    ts = dev.collect(samples)
    out = os.path.join(_outdir(cfg), args.name)
    write_trace_set(ts, out, overwrite=True)
    print(f"wrote {out}: N={ts.n_traces} T={ts.length} digest={_file_digest(out)}")
    return EXIT_OK


def cmd_cpa(args) -> int:
    cfg = _load_config(args)
    wm = _secret(cfg)
    dev = SimulatedAccelerator(wm, target_snr=cfg.target_snr, master_seed=cfg.seed)
    res = full_cpa_attack(
        dev.collect,
        cfg.n,
        strategy=cfg.strategy,
        n_traces=cfg.n_traces,
        seed=cfg.seed,
        eq_threshold=cfg.eq_threshold,
        input_hw=cfg.input_hw,
    )
    out = _outdir(cfg)
    # Per-PE candidate scores: 256 rows per PE, the raw ranking evidence.
    lines = ["pe_i,pe_j,candidate,abs_rho,rank"]
    for (i, j), r in sorted(res.per_pe.items()):
        for s in r.scores:
            lines.append(f"{i},{j},{s.candidate},{s.rho!r},{s.rank}")
    _atomic_write_text(os.path.join(out, "cpa_candidates.csv"), "\n".join(lines) + "\n")
    truth = wm.values
    summary = {
        "strategy": res.strategy,
        "recovered": res.recovered.tolist(),
        "recovered_count": res.recovered_count(truth),
        "unresolved": [list(pe) for pe in res.unresolved],
        "equivalence_classes": {
            f"{i},{j}": r.equivalence_class for (i, j), r in sorted(res.per_pe.items())
        },
        "true_rho": {
            f"{i},{j}": r.score_of(int(truth[i - 1, j - 1]))
            for (i, j), r in sorted(res.per_pe.items())
        },
    }
    _atomic_write_text(
        os.path.join(out, "cpa_summary.json"),
        json.dumps(summary, indent=2, sort_keys=True) + "\n",
    )
    ok = res.recovered_count(truth) == cfg.n * cfg.n
    print(f"recovered {res.recovered_count(truth)}/{cfg.n * cfg.n} weights")
    for row in res.recovered:
        print("  " + " ".join(f"{v:3d}" for v in row))
    return EXIT_OK if ok else EXIT_ATTACK_FAILED


def cmd_template_profile(args) -> int:
    cfg = _load_config(args)
    wm = _secret(cfg)
    out = _outdir(cfg)
    sigma = 0.0
    if cfg.target_snr is not None:
        # Profiling noise matched to the attack noise: calibrate on a probe
        # set of row-isolating inputs, like the attack itself will.
        from .noise import calibrate_sigma
        from .power import generate_trace_set

        probe = isolated_row_inputs(1, cfg.n, 256, [cfg.seed, 0x9E], cfg.input_hw)
        sigma = calibrate_sigma(generate_trace_set(wm, probe), cfg.target_snr)
    for i in range(1, cfg.n + 1):
        samples = isolated_row_inputs(
            i, cfg.n, cfg.attack_traces, [cfg.seed, 0x9E, i], cfg.input_hw
        )
        for j in range(1, cfg.n + 1):
            pcfg = ProfilingConfig(
                traces_per_class=cfg.traces_per_class,
                poi_count=cfg.poi_count,
                sigma=sigma,
                seed=cfg.seed,
            )
            tmpl = build_template(
                (i, j),
                wm.values,
                cfg.n,
                pcfg,
                samples,
                cycles=range(i + j - 2, cfg.n + j - 1),
            )
            path = os.path.join(out, f"template_{i}{j}.json")
            _atomic_write_text(path, tmpl.to_json() + "\n")
    print(f"wrote {cfg.n * cfg.n} templates to {out} (sigma={sigma!r})")
    return EXIT_OK


def cmd_template_attack(args) -> int:
    from .template import full_template_attack

    cfg = _load_config(args)
    wm = _secret(cfg)
    if args.profile_snr is not None and args.profile_snr != (cfg.target_snr or 0.0):
        print(
            f"warning: profiling noise (SNR {args.profile_snr}) does not match "
            f"attack noise (SNR {cfg.target_snr}); matched noise is assumed "
            "by the attack statistics",
            file=sys.stderr,
        )
    dev = SimulatedAccelerator(wm, target_snr=cfg.target_snr, master_seed=cfg.seed)
    res = full_template_attack(
        dev,
        attack_traces=cfg.attack_traces,
        traces_per_class=cfg.traces_per_class,
        poi_count=cfg.poi_count,
        seed=cfg.seed,
        trace_reuse=args.trace_reuse,
    )
    truth = wm.values
    count = res.recovered_count(truth)
    out = _outdir(cfg)
    summary = {
        "recovered": res.recovered.tolist(),
        "recovered_count": count,
        "attack_traces_per_target": res.traces_used,
        "trace_reuse": res.trace_reuse,
        "target_snr": cfg.target_snr,
    }
    _atomic_write_text(
        os.path.join(out, "template_summary.json"),
        json.dumps(summary, indent=2, sort_keys=True) + "\n",
    )
    print(
        f"recovered {count}/{cfg.n * cfg.n} weights with "
        f"{res.traces_used} attack traces per target"
    )
    for row in res.recovered:
        print("  " + " ".join(f"{v:3d}" for v in row))
    if count != cfg.n * cfg.n:
        print("attack failed: not all weights recovered", file=sys.stderr)
        return EXIT_ATTACK_FAILED
    return EXIT_OK


def cmd_noise_sweep(args) -> int:
    cfg = _load_config(args)
    wm = _secret(cfg)
    out = _outdir(cfg)
    if args.attack in ("cpa", "both"):
        points = cpa_noise_sweep(
            wm.values,
            n_traces=cfg.n_traces,
            seed=cfg.seed,
            grid=cfg.snr_grid,
            strategy=cfg.strategy,
            input_hw=cfg.input_hw,
        )
        write_sweep_csv(points, os.path.join(out, "noise_sweep_cpa.csv"))
        plot_sweep(points, os.path.join(out, "noise_sweep_cpa.svg"))
        print("cpa:", [(p.snr, p.recovered_count) for p in points])
    if args.attack in ("template", "both"):
        points = template_noise_sweep(
            wm.values,
            attack_traces=cfg.attack_traces,
            traces_per_class=cfg.traces_per_class,
            seed=cfg.seed,
            grid=cfg.snr_grid,
        )
        write_sweep_csv(points, os.path.join(out, "noise_sweep_template.csv"))
        plot_sweep(points, os.path.join(out, "noise_sweep_template.svg"))
        print("template:", [(p.snr, p.recovered_count) for p in points])
    if args.attack == "lambda":
        points = lambda_attenuation(wm.values, seeds=range(10))
        write_lambda_csv(points, os.path.join(out, "lambda_attenuation.csv"))
        worst = max(p.deviation for p in points)
        print(f"lambda attenuation: worst |rho' - lambda*rho| = {worst:.4f}")
    return EXIT_OK


def cmd_verify(args) -> int:
    a = read_trace_set(args.set_a)
    b = read_trace_set(args.set_b)
    report = compare_trace_sets(a, b, reduction=args.reduction)
    ok = report.pcc >= args.threshold
    print(
        f"pcc={report.pcc!r} scc={report.scc!r} n={report.n_points} "
        f"reduction={report.reduction} -> {'PASS' if ok else 'FAIL'} "
        f"(threshold {args.threshold})"
    )
    return EXIT_OK if ok else EXIT_ATTACK_FAILED


def cmd_report(args) -> int:
    cfg = _load_config(args)
    out = _outdir(cfg)
    lines = ["# Experiment report", ""]
    found = False
    for name, title in (
        ("noise_sweep_cpa.csv", "CPA noise sweep"),
        ("noise_sweep_template.csv", "Template noise sweep"),
    ):
        path = os.path.join(out, name)
        if not os.path.exists(path):
            continue
        found = True
        points = read_sweep_csv(path)
        lines.append(f"## {title}")
        lines.append("")
        lines.append("| SNR | weights recovered | true-candidate rho |")
        lines.append("|-----|-------------------|--------------------|")
        for p in points:
            rho = (
                f"{p.true_rho_min:.3f} - {p.true_rho_max:.3f}"
                if p.true_rho_min is not None
                else "-"
            )
            lines.append(f"| {p.snr} | {p.recovered_count} | {rho} |")
        lines.append("")
    for name, title in (
        ("cpa_summary.json", "CPA attack"),
        ("template_summary.json", "Template attack"),
    ):
        path = os.path.join(out, name)
        if not os.path.exists(path):
            continue
        found = True
        with open(path) as f:
            summary = json.load(f)
        lines.append(f"## {title}")
        lines.append("")
        lines.append("```json")
        lines.append(json.dumps(summary, indent=2, sort_keys=True))
        lines.append("```")
        lines.append("")
    if not found:
        print(f"no experiment outputs found in {out}", file=sys.stderr)
        return EXIT_IO
    _atomic_write_text(os.path.join(out, "report.md"), "\n".join(lines) + "\n")
    print(f"wrote {os.path.join(out, 'report.md')}")
    return EXIT_OK


def _add_common(p) -> None:
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--seed", type=int, help="master seed override")
    p.add_argument("--out", help="output directory override")
    p.add_argument("--snr", type=float, help="target SNR (omit for noiseless)")
    p.add_argument("--traces", type=int, help="number of attack traces")
    p.add_argument(
        "--tuned",
        type=int,
        nargs="?",
        const=0,
        default=None,
        metavar="STAGE",
        help="chosen-plaintext inputs activating rows 1..STAGE only "
        "(default: all rows); implies the tuned strategy",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sysca",
        description="Power side-channel attack simulator for a "
        "weight-stationary systolic array",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("gen-traces", help="generate and persist a trace set")
    _add_common(p)
    p.add_argument("--name", default="traces.scatrc", help="output file name")
    p.set_defaults(func=cmd_gen_traces)

    p = sub.add_parser("cpa", help="run the correlation power analysis attack")
    _add_common(p)
    p.set_defaults(func=cmd_cpa)

    p = sub.add_parser("template", help="profiled (template) attack")
    tsub = p.add_subparsers(dest="template_verb", required=True)
    tp = tsub.add_parser("profile", help="build and persist per-PE templates")
    _add_common(tp)
    tp.set_defaults(func=cmd_template_profile)
    ta = tsub.add_parser("attack", help="run the full template attack")
    _add_common(ta)
    ta.add_argument(
        "--profile-snr",
        type=float,
        help="SNR the templates were profiled at (warns when mismatched)",
    )
    ta.add_argument(
        "--trace-reuse",
        choices=("row", "per-pe"),
        default="per-pe",
        help="share one attack set per row or collect per-target sets",
    )
    ta.set_defaults(func=cmd_template_attack)

    p = sub.add_parser("noise-sweep", help="attack success across an SNR grid")
    _add_common(p)
    p.add_argument(
        "--attack",
        choices=("cpa", "template", "both", "lambda"),
        default="cpa",
        help="which attack to sweep (lambda: attenuation-law measurement)",
    )
    p.set_defaults(func=cmd_noise_sweep)

    p = sub.add_parser("verify", help="compare two persisted trace sets")
    p.add_argument("set_a")
    p.add_argument("set_b")
    p.add_argument("--reduction", choices=("energy", "max"), default="energy")
    p.add_argument("--threshold", type=float, default=0.95)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("report", help="aggregate experiment outputs")
    _add_common(p)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "tuned", None) == 0:
        args.tuned = None  # bare --tuned: tuned strategy, default stage
        args.tuned_strategy = True
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except TraceFormatError as e:
        print(f"trace file error: {e}", file=sys.stderr)
        return EXIT_IO
    except FileNotFoundError as e:
        print(f"file not found: {e}", file=sys.stderr)
        return EXIT_IO
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main(argv=None))

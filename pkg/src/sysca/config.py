"""Experiment configuration: one dataclass, JSON round-trip, sane defaults.

Every CLI run and scripted experiment is driven by an ExperimentConfig so
results are reproducible from a single JSON file plus the package version.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

DEFAULT_SNR_GRID = (10.0, 8.0, 6.0, 4.0, 3.5, 3.0, 2.5, 2.0, 1.5)


@dataclass
class ExperimentConfig:
    """Knobs for trace generation, attacks, and sweeps."""

    n: int = 3
    seed: int = 0
    # Secret weights of the simulated device; None = the canonical secret
    # for n = 3, otherwise seeded random weights.
    weights: list | None = None
    n_traces: int = 20000
    strategy: str = "tuned"  # "tuned" | "random"
    target_snr: float | None = None  # None = noiseless
    input_hw: int | None = 4  # fixed Hamming weight of attacked-row inputs
    eq_threshold: float = 0.95
    snr_grid: tuple = DEFAULT_SNR_GRID
    # Template-attack knobs.
    traces_per_class: int = 100
    poi_count: int = 5
    attack_traces: int = 15
    template_repetitions: int = 50
    out_dir: str = field(
        default_factory=lambda: os.environ.get("SYSCA_OUT_DIR", "results")
    )

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.n_traces < 2:
            raise ValueError("n_traces must be >= 2")
        if self.strategy not in ("tuned", "random"):
            raise ValueError(f"unknown strategy: {self.strategy!r}")
        if self.target_snr is not None and self.target_snr <= 0:
            raise ValueError("target_snr must be > 0 or None")
        if self.input_hw is not None and not (1 <= self.input_hw <= 8):
            raise ValueError("input_hw must be in 1..8 or None")
        if self.weights is not None:
            w = [list(map(int, row)) for row in self.weights]
            if len(w) != self.n or any(len(row) != self.n for row in w):
                raise ValueError(f"weights must be {self.n}x{self.n}")
            if any(not (0 <= v <= 255) for row in w for v in row):
                raise ValueError("weights must be 8-bit unsigned integers")
            self.weights = w
        self.snr_grid = tuple(float(s) for s in self.snr_grid)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["snr_grid"] = list(self.snr_grid)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

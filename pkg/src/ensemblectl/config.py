"""Dataclass configuration for synthesis, norms, and experiments.

All tunables live here so experiment manifests can echo a complete,
hashable record of what was run.  YAML config files map onto the
``ExperimentConfig`` tree; unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any

import yaml

# Spectral-radius margin: a system is "stable" iff rho(A) <= 1 - STAB_MARGIN.
STAB_MARGIN = 1e-6


@dataclass(frozen=True)
class GridSettings:
    """Frequency-grid controls for H-infinity evaluation."""

    n_points: int = 512
    refine_peak: bool = True
    doubling_rtol: float = 0.005  # accepted relative shift when the grid doubles
    max_doublings: int = 3

    def __post_init__(self) -> None:
        if self.n_points < 2:
            raise ValueError("grid needs at least 2 points")


@dataclass(frozen=True)
class SynthesisSettings:
    """Per-agent factorization and model-matching controls."""

    # weight on the control channel of the regulated output; calibrated so the
    # compliant coupling sits in the quadratic-relief regime of the gap
    control_weight: float = 0.5
    fir_order: int = 64
    riccati_tol: float = 1e-12
    riccati_max_iter: int = 10_000
    lawson_tol: float = 1e-6
    lawson_max_iter: int = 500
    lawson_damping: float = 0.5
    gamma_scale: float = 10.0  # default bound = gamma_scale * unconstrained ||Z||_inf
    tail_rtol: float = 1e-8  # impulse-response tail energy tolerance (relative)


@dataclass(frozen=True)
class DominanceProfile:
    """Column-dominance level as a function of population size: alpha(n) = c * n**p."""

    coefficient: float = 1.0
    exponent: float = 0.25

    def __post_init__(self) -> None:
        if self.coefficient <= 0:
            raise ValueError("coefficient must be positive")
        if self.exponent < 0:
            raise ValueError("exponent must be nonnegative")

    def alpha(self, n: int) -> float:
        return self.coefficient * float(n) ** self.exponent

    @property
    def compliant(self) -> bool:
        """True when alpha(n) grows strictly slower than sqrt(n)."""
        return self.exponent < 0.5


@dataclass(frozen=True)
class ExperimentConfig:
    """Top-level configuration for the CLI experiments."""

    seed: int = 7
    n_list: tuple[int, ...] = (30, 60, 120, 200, 300, 400, 600)
    compliant: DominanceProfile = field(default_factory=lambda: DominanceProfile(1.0, 0.25))
    violating: DominanceProfile = field(default_factory=lambda: DominanceProfile(1.0, 0.6))
    decay_exponents: tuple[float, ...] = (0.0, 0.25, 0.6)
    fanout: int | None = None  # off-diagonal rows per column; None = n - 1
    weight_mode: str = "signed"  # "signed" | "nonnegative" redistribution weights
    decay_fanout: int | None = 10
    decay_weight_mode: str = "nonnegative"
    m_list: tuple[int, ...] = (4, 10, 20)  # truncation sizes for the decay study
    norm: str = "hinf"  # "hinf" | "h2"
    block: str = "two"  # "one" | "two"
    grid: GridSettings = field(default_factory=GridSettings)
    synthesis: SynthesisSettings = field(default_factory=SynthesisSettings)
    horizon: int = 400
    noise_std: float = 0.05
    sine_amplitude: float = 1.0
    sine_period: float = 50.0
    sine_mode: str = "v-channel"  # "v-channel" | "reference"
    sim_n: int = 60
    deterministic: bool = False
    out_dir: str = "runs"

    def __post_init__(self) -> None:
        if list(self.n_list) != sorted(self.n_list):
            raise ValueError("n_list must be ascending")
        if any(n < 2 for n in self.n_list):
            raise ValueError("population sizes must be >= 2")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.norm not in ("hinf", "h2"):
            raise ValueError(f"unknown norm kind {self.norm!r}")
        if self.block not in ("one", "two"):
            raise ValueError(f"unknown block kind {self.block!r}")
        if self.weight_mode not in ("signed", "nonnegative"):
            raise ValueError(f"unknown weight_mode {self.weight_mode!r}")
        if self.decay_weight_mode not in ("signed", "nonnegative"):
            raise ValueError(f"unknown decay_weight_mode {self.decay_weight_mode!r}")
        if self.sine_mode not in ("v-channel", "reference"):
            raise ValueError(f"unknown sine_mode {self.sine_mode!r}")
        if any(m < 1 for m in self.m_list):
            raise ValueError("truncation sizes must be >= 1")


def _from_mapping(cls: type, data: dict[str, Any], path: str) -> Any:
    """Build a dataclass from a nested mapping, rejecting unknown keys."""
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ValueError(f"unknown config key(s) at {path or 'top level'}: {sorted(unknown)}")
    kwargs: dict[str, Any] = {}
    for name, value in data.items():
        ftype = fields[name].type
        if isinstance(value, dict):
            sub = {
                "grid": GridSettings,
                "synthesis": SynthesisSettings,
                "compliant": DominanceProfile,
                "violating": DominanceProfile,
            }.get(name)
            if sub is None:
                raise ValueError(f"config key {path}{name} does not accept a mapping")
            kwargs[name] = _from_mapping(sub, value, f"{path}{name}.")
        elif isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
        del ftype
    return cls(**kwargs)


def load_config(path: str) -> ExperimentConfig:
    """Load an ``ExperimentConfig`` from a YAML file, rejecting unknown keys."""
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ValueError("config file must contain a mapping")
    return _from_mapping(ExperimentConfig, data, "")


def config_to_dict(cfg: Any) -> Any:
    if dataclasses.is_dataclass(cfg):
        return {f.name: config_to_dict(getattr(cfg, f.name)) for f in dataclasses.fields(cfg)}
    if isinstance(cfg, tuple):
        return [config_to_dict(v) for v in cfg]
    return cfg


def config_hash(cfg: ExperimentConfig) -> str:
    """Stable hash of the full configuration tree."""
    blob = json.dumps(config_to_dict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()

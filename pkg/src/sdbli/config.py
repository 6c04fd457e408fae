"""Experiment configuration: one JSON document, nested dataclasses."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass
class GridSection:
    n: int = 16


@dataclass
class SystemSection:
    P: int = 4
    scheme: str = "stripes"


@dataclass
class TruthSection:
    kind: str = "gaussian_bumps"
    seed: int = 1
    norm: float = 1.0


@dataclass
class NoiseSection:
    delta_total: float = 0.0
    deltas: list | None = None  # per-equation levels; overrides delta_total
    seed: int = 11
    sweep: list | None = None  # delta_total values for the noise sweep


@dataclass
class TrainingSection:
    N: int = 10
    seed: int = 7
    kind: str = "gaussian_bumps"
    trunc_tol: float = 1e-12
    include_truth: bool = False


@dataclass
class SolverSection:
    omega_bar: float = 200.0
    omega_min: float | None = None  # default: omega_bar
    omega_max: float | None = None  # default: omega_bar
    tau: float = 1e9
    c_lambda: float | None = None  # None: c_lambda_fraction of the admissible maximum
    c_lambda_fraction: float = 0.5
    lambda_max: float | str = "inf"
    lambda_mode: str = "fast"
    sigma: float | None = None  # default: 2 |u0 - u_true|
    theta: float = 1.0
    K0: float = 10.0
    seed: int = 2024
    max_iters: int = 2000
    freeze_check_period: int | None = None
    max_newton_iters: int = 100


@dataclass
class DiagnosticsSection:
    R: int = 50
    slack: float = 1e-3
    record_period: int = 1
    n_const_samples: int = 30
    const_seed: int = 3


@dataclass
class OutputSection:
    directory: str = "out"
    prefix: str = "sdbli"


@dataclass
class ExperimentConfig:
    grid: GridSection = field(default_factory=GridSection)
    system: SystemSection = field(default_factory=SystemSection)
    truth: TruthSection = field(default_factory=TruthSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    solver: SolverSection = field(default_factory=SolverSection)
    diagnostics: DiagnosticsSection = field(default_factory=DiagnosticsSection)
    output: OutputSection = field(default_factory=OutputSection)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("<root>", "expected a JSON object")
        kwargs = {}
        known = {f.name: f for f in fields(cls)}
        for key, value in d.items():
            if key not in known:
                raise ConfigError(key, "unknown section")
            section_cls = known[key].default_factory
            if not isinstance(value, dict):
                raise ConfigError(key, "expected an object")
            names = {f.name for f in fields(section_cls)}
            for sub in value:
                if sub not in names:
                    raise ConfigError(f"{key}.{sub}", "unknown field")
            kwargs[key] = section_cls(**value)
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError("<file>", str(exc)) from exc
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"not valid JSON: {exc}") from exc
        except TypeError as exc:
            raise ConfigError("<root>", str(exc)) from exc

    def validate(self) -> None:
        def need(ok, name, msg):
            if not ok:
                raise ConfigError(name, msg)

        n = self.grid.n
        need(isinstance(n, int) and n >= 1, "grid.n", "must be a positive integer")
        P = self.system.P
        need(isinstance(P, int) and P >= 1, "system.P", "must be a positive integer")
        need(self.system.scheme in ("stripes", "blocks"), "system.scheme", "must be 'stripes' or 'blocks'")
        if self.system.scheme == "stripes":
            need(P <= n, "system.P", f"stripes need P <= n (P={P}, n={n})")
        need(P <= n * n, "system.P", "more equations than grid nodes")
        need(self.truth.kind in ("gaussian_bumps", "random_fourier"), "truth.kind", "unknown generator")
        need(0.1 <= self.truth.norm <= 10.0, "truth.norm", "must lie in [0.1, 10]")
        need(self.noise.delta_total >= 0, "noise.delta_total", "must be non-negative")
        if self.noise.deltas is not None:
            need(len(self.noise.deltas) == P, "noise.deltas", f"needs {P} entries")
            need(all(d >= 0 for d in self.noise.deltas), "noise.deltas", "must be non-negative")
        if self.noise.sweep is not None:
            sw = self.noise.sweep
            need(len(sw) >= 1 and all(d > 0 for d in sw), "noise.sweep", "needs positive entries")
            need(all(b < a for a, b in zip(sw, sw[1:])), "noise.sweep", "must be strictly decreasing")
        need(self.training.N >= 1, "training.N", "must be >= 1")
        need(self.training.trunc_tol >= 0, "training.trunc_tol", "must be non-negative")
        need(self.training.kind in ("gaussian_bumps", "random_fourier"), "training.kind", "unknown generator")
        s = self.solver
        lo = s.omega_bar if s.omega_min is None else s.omega_min
        hi = s.omega_bar if s.omega_max is None else s.omega_max
        need(0 < lo <= s.omega_bar <= hi, "solver.omega_bar", "need 0 < omega_min <= omega_bar <= omega_max")
        need(s.tau >= 1, "solver.tau", "must be >= 1")
        need(s.c_lambda is None or s.c_lambda >= 0, "solver.c_lambda", "must be non-negative")
        need(0 <= s.c_lambda_fraction < 1, "solver.c_lambda_fraction", "must lie in [0, 1)")
        need(s.lambda_mode in ("fast", "strict"), "solver.lambda_mode", "must be 'fast' or 'strict'")
        need(s.sigma is None or s.sigma > 0, "solver.sigma", "must be positive")
        need(0 < s.theta < 2, "solver.theta", "must lie in (0, 2)")
        need(s.K0 > 0, "solver.K0", "must be positive")
        need(s.max_iters >= 0, "solver.max_iters", "must be non-negative")
        need(s.max_newton_iters >= 1, "solver.max_newton_iters", "must be >= 1")
        lm = s.lambda_max
        need(lm == "inf" or (isinstance(lm, (int, float)) and lm >= 0), "solver.lambda_max",
             "must be 'inf' or non-negative")
        need(self.diagnostics.R >= 2, "diagnostics.R", "must be >= 2")
        need(self.diagnostics.record_period >= 1, "diagnostics.record_period", "must be >= 1")
        need(self.diagnostics.n_const_samples >= 2, "diagnostics.n_const_samples", "must be >= 2")

    @property
    def lambda_max_value(self) -> float:
        lm = self.solver.lambda_max
        return math.inf if lm == "inf" else float(lm)

"""From an ExperimentConfig to ready-to-run problems, and the on-disk data layout."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .data_driven import (
    TrainingSet,
    build_all,
    generate_training,
    training_from_dict,
    training_to_dict,
)
from .forward import NewtonConfig
from .grid import GridFunction, GridSpec, from_json_dict, norm, to_json_dict
from .solver import AdmissibilityReport, SolverConfig, admissible_c_lambda, check_admissibility
from .system import (
    EstimatedConstants,
    ExactData,
    InverseProblem,
    NoisyData,
    ObservationPartition,
    SamplingRegion,
    add_noise,
    estimate_constants,
    exact_from_dict,
    exact_to_dict,
    make_exact_data,
    make_partition,
    noisy_from_dict,
    noisy_to_dict,
    split_delta,
    synthesize_truth,
)

DATA_FILES = {
    "truth": "u_true.json",
    "exact": "exact_data.json",
    "noisy": "noisy_data.json",
    "training": "training.json",
}
MANIFEST = "manifest.json"


class MissingData(FileNotFoundError):
    pass


@dataclass(eq=False)
class GeneratedData:
    part: ObservationPartition
    exact: ExactData
    noisy: NoisyData
    training: TrainingSet


def noise_levels(xc: ExperimentConfig, P: int, delta_total: float | None = None) -> np.ndarray:
    if delta_total is None and xc.noise.deltas is not None:
        return np.asarray(xc.noise.deltas, dtype=float)
    return split_delta(xc.noise.delta_total if delta_total is None else delta_total, P)


def generate(xc: ExperimentConfig) -> GeneratedData:
    spec = GridSpec(xc.grid.n)
    part = make_partition(spec, xc.system.P, xc.system.scheme)
    u_true = synthesize_truth(spec, xc.truth.kind, xc.truth.seed, xc.truth.norm)
    exact = make_exact_data(u_true, part)
    noisy = add_noise(exact, part, noise_levels(xc, part.P), xc.noise.seed)
    training = generate_training(
        part, xc.training.N, xc.training.kind, xc.training.seed,
        include=u_true if xc.training.include_truth else None, target_norm=xc.truth.norm,
    )
    return GeneratedData(part, exact, noisy, training)


def write_data(data: GeneratedData, xc: ExperimentConfig, directory) -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    payloads = {
        "truth": {**to_json_dict(data.exact.u_true), "kind": xc.truth.kind, "seed": xc.truth.seed},
        "exact": exact_to_dict(data.exact, data.part, xc.truth.seed),
        "noisy": noisy_to_dict(data.noisy, data.part),
        "training": training_to_dict(data.training, data.part),
    }
    written = []
    for key, name in DATA_FILES.items():
        path = d / name
        path.write_text(json.dumps(payloads[key]))
        written.append(path)
    manifest = {
        "files": {k: v for k, v in DATA_FILES.items()},
        "seeds": {
            "truth": xc.truth.seed,
            "noise": xc.noise.seed,
            "training": xc.training.seed,
        },
        "config": xc.to_dict(),
    }
    (d / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    written.append(d / MANIFEST)
    return written


def read_data(directory) -> GeneratedData:
    d = Path(directory)
    missing = [n for n in list(DATA_FILES.values()) if not (d / n).is_file()]
    if missing:
        raise MissingData(f"missing in {d}: {', '.join(missing)}")
    exact, part = exact_from_dict(json.loads((d / DATA_FILES["exact"]).read_text()))
    noisy = noisy_from_dict(json.loads((d / DATA_FILES["noisy"]).read_text()))
    training = training_from_dict(json.loads((d / DATA_FILES["training"]).read_text()), part)
    u_true = from_json_dict(json.loads((d / DATA_FILES["truth"]).read_text()))
    if not np.array_equal(u_true.values, exact.u_true.values):
        raise ValueError("u_true.json and exact_data.json disagree")
    return GeneratedData(part, exact, noisy, training)


@dataclass(eq=False)
class Experiment:
    problem: InverseProblem
    u0: GridFunction
    solver: SolverConfig
    consts: EstimatedConstants
    report: AdmissibilityReport
    data: GeneratedData

    @property
    def initial_sq_dist(self) -> float:
        return norm(self.u0 - self.data.exact.u_true) ** 2


def build_experiment(xc: ExperimentConfig, data: GeneratedData | None = None,
                     start_at_truth: bool = False, noisy: NoisyData | None = None,
                     c_lambda: float | None = None) -> Experiment:
    """Fit surrogates, estimate constants, settle sigma and c_lambda.

    ``sigma`` defaults to ``2 |u0 - u_true|`` (or ``|u_true|`` when starting at
    the truth, where that distance vanishes).
    """
    data = generate(xc) if data is None else data
    noisy = data.noisy if noisy is None else noisy
    part, exact = data.part, data.exact
    spec = part.spec
    ops = build_all(data.training, part, xc.training.trunc_tol)
    u_true = exact.u_true
    u0 = u_true if start_at_truth else GridFunction.zeros(spec)

    s = xc.solver
    sigma = s.sigma
    if sigma is None:
        dist = norm(u0 - u_true)
        sigma = 2.0 * dist if dist > 0 else max(norm(u_true), 1e-12)
    consts = estimate_constants(
        part, SamplingRegion(u_true, sigma), xc.diagnostics.n_const_samples,
        xc.diagnostics.const_seed, operators=ops, y_delta=noisy.y_delta_parts, exact=exact,
    )
    omega_min = s.omega_bar if s.omega_min is None else s.omega_min
    omega_max = s.omega_bar if s.omega_max is None else s.omega_max
    cfg = SolverConfig(
        omega_bar=s.omega_bar, omega_min=omega_min, omega_max=omega_max, tau=s.tau,
        c_lambda=0.0, lambda_max=xc.lambda_max_value, lambda_mode=s.lambda_mode, sigma=sigma,
        theta=s.theta, K0=s.K0, seed=s.seed, max_iters=s.max_iters,
        freeze_check_period=s.freeze_check_period,
    )
    if c_lambda is None:
        c_lambda = s.c_lambda
    if c_lambda is None:
        c_lambda = admissible_c_lambda(consts, cfg, s.c_lambda_fraction)
        c_lambda = 0.0 if not np.isfinite(c_lambda) else c_lambda
    cfg = replace(cfg, c_lambda=float(c_lambda))
    report = check_admissibility(consts, cfg)
    problem = InverseProblem(part, noisy.y_delta_parts, noisy.deltas,
                             newton=NewtonConfig(max_newton_iters=s.max_newton_iters),
                             operators=ops, u_true=u_true)
    return Experiment(problem, u0, cfg, consts, report, data)


def sweep_problem_builder(exp: Experiment, xc: ExperimentConfig):
    """Problems sharing everything with ``exp`` except the noise level."""
    data = exp.data

    def build(delta_total: float) -> InverseProblem:
        noisy = add_noise(data.exact, data.part, split_delta(delta_total, data.part.P), xc.noise.seed)
        return replace(exp.problem, y_delta=noisy.y_delta_parts, deltas=noisy.deltas)

    return build

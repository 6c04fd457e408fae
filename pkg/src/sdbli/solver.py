"""Stochastic data-driven Bouligand-Landweber iteration.

One step with a uniformly drawn equation index ``i``::

    u <- u - omega_k G_i(u)^* (F_i(u) - y_i) - lambda_k M_i^* (M_i u - y_i)

``omega_k`` is a gated constant (open while the sampled residual exceeds
``tau * delta_i``) and ``lambda_k`` follows the residual-proportional schedule
capped by ``lambda_max``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Literal

import numpy as np

from .forward import NewtonConvergenceError, solve_forward, _solver
from .grid import GridFunction, weighted_norm
from .system import EstimatedConstants, InverseProblem

LAMBDA_FLOOR = 1e-15
TRACE_COLUMNS = ("k", "i_k", "residual", "omega_k", "lambda_k", "err_to_truth", "ball_exit")


class ContractError(ValueError):
    pass


class RuleInapplicable(ValueError):
    pass


class SolverFailure(RuntimeError):
    def __init__(self, k: int, cause: Exception):
        super().__init__(f"forward solve failed at iteration {k}: {cause}")
        self.k = k
        self.cause = cause


@dataclass(frozen=True)
class SolverConfig:
    omega_bar: float = 100.0
    omega_min: float = 100.0
    omega_max: float = 100.0
    tau: float = 2.0
    c_lambda: float = 0.0
    lambda_max: float = math.inf
    lambda_mode: Literal["fast", "strict"] = "fast"
    sigma: float | None = None
    theta: float = 1.0
    K0: float = 1.0
    seed: int = 0
    max_iters: int = 1000
    freeze_check_period: int | None = None  # None -> 2P

    def __post_init__(self):
        if not 0 < self.omega_min <= self.omega_bar <= self.omega_max:
            raise ValueError("need 0 < omega_min <= omega_bar <= omega_max")
        if self.tau < 1:
            raise ValueError("tau must be >= 1")
        if self.c_lambda < 0 or self.lambda_max < 0:
            raise ValueError("c_lambda and lambda_max must be non-negative")
        if self.lambda_mode not in ("fast", "strict"):
            raise ValueError(f"unknown lambda_mode {self.lambda_mode!r}")
        if not 0 < self.theta < 2:
            raise ValueError("theta must lie in (0, 2)")
        if not self.K0 > 0:
            raise ValueError("K0 must be positive")
        if self.sigma is not None and not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        if math.isinf(d["lambda_max"]):
            d["lambda_max"] = "inf"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        d = dict(d)
        if d.get("lambda_max") in ("inf", "Infinity", None):
            d["lambda_max"] = math.inf
        return cls(**d)


# -- scalar rules ------------------------------------------------------------

def sample_index(rng: np.random.Generator, P: int) -> int:
    if P < 1:
        raise ValueError("P must be >= 1")
    return int(rng.integers(P))


def step_size(residual_ik: float, delta_ik: float, cfg: SolverConfig) -> float:
    return cfg.omega_bar if residual_ik > cfg.tau * delta_ik else 0.0


def lambda_schedule(residuals, i_k: int, cfg: SolverConfig, lambda_max: float | None = None,
                    P: int | None = None) -> float:
    """``min(lambda_max, c_lambda * r^2)``.

    ``r`` is the sampled residual in fast mode and the smallest residual over
    all equations in strict mode.  ``residuals`` is the per-equation array, or
    in fast mode may be just the scalar residual of equation ``i_k``.
    """
    cap = cfg.lambda_max if lambda_max is None else lambda_max
    if cfg.lambda_mode == "strict":
        if np.isscalar(residuals) or isinstance(residuals, dict):
            raise ContractError("strict mode needs the residuals of all equations")
        arr = np.asarray(residuals, dtype=float)
        if P is not None and arr.shape != (P,):
            raise ContractError(f"strict mode needs {P} residuals, got {arr.shape}")
        r = float(arr.min())
    elif np.isscalar(residuals):
        r = float(residuals)
    else:
        r = float(residuals[i_k])
    if cfg.c_lambda == 0.0:
        return 0.0
    return min(cap, cfg.c_lambda * r * r)


def effective_lambda_max(cfg: SolverConfig, consts: EstimatedConstants | None) -> float:
    """Tightest of the configured cap and ``sigma / (L_M C_M)``."""
    cap = cfg.lambda_max
    if consts is not None and cfg.sigma is not None and consts.L_M > 0 and consts.C_M_delta > 0:
        cap = min(cap, cfg.sigma / (consts.L_M * consts.C_M_delta))
    return cap


def a_priori_stop(delta_total: float, cfg: SolverConfig) -> int:
    """``ceil(K0 * delta^-theta)``."""
    if delta_total <= 0:
        raise RuleInapplicable("a-priori stopping needs a positive noise level")
    return int(math.ceil(cfg.K0 * delta_total ** (-cfg.theta)))


@dataclass(frozen=True)
class AdmissibilityReport:
    L_F: float
    L_M: float
    mu_hat: float
    C_M_delta: float
    c_lambda: float
    sigma: float
    omega_min: float
    omega_max: float
    tau: float
    descent: float  # omega (1 - L_F^2 Omega - mu)
    data_term: float  # 2 sigma L_M C_M C_lambda
    noise_term: float  # (1 + mu) Omega / tau
    slack_noisy: float
    slack_exact: float
    passes_noisy: bool
    passes_exact: bool

    @property
    def C_tilde_F(self) -> float:
        return 2.0 * self.slack_exact

    @property
    def passes(self) -> bool:
        return self.passes_noisy and self.passes_exact

    def to_dict(self) -> dict:
        d = asdict(self)
        d["C_tilde_F"] = self.C_tilde_F
        return d


def check_admissibility(consts: EstimatedConstants, cfg: SolverConfig,
                        sigma: float | None = None) -> AdmissibilityReport:
    sigma = cfg.sigma if sigma is None else sigma
    if sigma is None:
        raise ContractError("admissibility needs the ball radius sigma")
    w, W = cfg.omega_min, cfg.omega_max
    descent = w * (1.0 - consts.L_F**2 * W - consts.mu_hat)
    data_term = 2.0 * sigma * consts.L_M * consts.C_M_delta * cfg.c_lambda
    noise_term = (1.0 + consts.mu_hat) * W / cfg.tau
    slack_noisy = descent - data_term - noise_term
    slack_exact = descent - data_term
    return AdmissibilityReport(
        consts.L_F, consts.L_M, consts.mu_hat, consts.C_M_delta, cfg.c_lambda, sigma,
        w, W, cfg.tau, descent, data_term, noise_term, slack_noisy, slack_exact,
        bool(slack_noisy >= 0), bool(slack_exact > 0),
    )


def admissible_c_lambda(consts: EstimatedConstants, cfg: SolverConfig, fraction: float = 0.5) -> float:
    """``fraction`` of the largest ``c_lambda`` keeping the exact-data inequality strict."""
    sigma = cfg.sigma
    descent = cfg.omega_min * (1.0 - consts.L_F**2 * cfg.omega_max - consts.mu_hat)
    denom = 2.0 * sigma * consts.L_M * consts.C_M_delta
    if descent <= 0:
        return 0.0
    if denom == 0:
        return math.inf
    return fraction * descent / denom


# -- trace -------------------------------------------------------------------

@dataclass(eq=False)
class IterationTrace:
    k: list = field(default_factory=list)
    i_k: list = field(default_factory=list)
    residual: list = field(default_factory=list)
    omega_k: list = field(default_factory=list)
    lambda_k: list = field(default_factory=list)
    err_to_truth: list = field(default_factory=list)
    ball_exit: list = field(default_factory=list)
    # in-memory diagnostics (not part of the CSV export)
    residual_min: list = field(default_factory=list)
    full_residual_sq: list = field(default_factory=list)
    stop_reason: str = "budget"
    u_final: GridFunction | None = None
    final_err: float | None = None
    final_residual_sq: float | None = None
    deltas: np.ndarray | None = None
    lambda_max: float = math.inf
    meta: dict = field(default_factory=dict)

    @property
    def k_stop(self) -> int:
        return len(self.k)

    def __len__(self) -> int:
        return len(self.k)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for row in zip(self.k, self.i_k, self.residual, self.omega_k, self.lambda_k,
                       self.err_to_truth, self.ball_exit):
            k, i, r, om, lam, err, ex = row
            w.writerow([k, i, repr(r), repr(om), repr(lam), "" if err is None else repr(err), int(ex)])
        return buf.getvalue()

    def sidecar(self, cfg: SolverConfig, consts: EstimatedConstants | None = None,
                report: AdmissibilityReport | None = None) -> dict:
        return {
            "config": cfg.to_dict(),
            "constants": None if consts is None else asdict(consts),
            "admissibility": None if report is None else report.to_dict(),
            "stop_reason": self.stop_reason,
            "k_stop": self.k_stop,
            "final_err": self.final_err,
            "deltas": None if self.deltas is None else [float(d) for d in self.deltas],
            "lambda_max_effective": "inf" if math.isinf(self.lambda_max) else self.lambda_max,
            **self.meta,
        }


# -- the iteration -----------------------------------------------------------

class _Stepper:
    """Array-level state shared by ``sdbli_step`` and ``run_sdbli``."""

    def __init__(self, problem: InverseProblem, cfg: SolverConfig, lambda_max: float):
        self.problem = problem
        self.cfg = cfg
        self.lambda_max = lambda_max
        self.spec = problem.spec
        self.labels = np.zeros(self.spec.size, dtype=np.intp)
        for i, m in enumerate(problem.part.masks):
            self.labels[m] = i
        self.y_full = problem.y_delta_full
        self.lin = _solver(self.spec.n)

    def residuals(self, u: GridFunction):
        state = solve_forward(u, self.problem.newton)
        r = state.y.values - self.y_full
        sq = np.bincount(self.labels, weights=r * r, minlength=self.problem.P) * self.spec.h**2
        return state, r, np.sqrt(sq), float(sq.sum())

    def step(self, u: GridFunction, i: int):
        """Return ``(u_next, residual_i, omega, lambda, all_residuals, full_sq)``."""
        cfg, problem = self.cfg, self.problem
        state, r, res, full_sq = self.residuals(u)
        omega = step_size(float(res[i]), float(problem.deltas[i]), cfg)
        lam = lambda_schedule(res, i, cfg, self.lambda_max, P=problem.P)
        values = u.values
        if omega != 0.0:
            block = np.where(problem.part.masks[i], r, 0.0)
            values = values - omega * self.lin.solve(state.active, block)
        if lam != 0.0:
            if problem.operators is None:
                raise ContractError("lambda_k > 0 needs data-driven operators")
            op = problem.operators[i]
            mres = op.matrix @ u.values - problem.y_delta[i].values[op.mask]
            values = values - lam * (op.matrix.T @ mres)
        u_next = u if values is u.values else GridFunction(self.spec, values)
        return u_next, float(res[i]), omega, lam, res, full_sq


def sdbli_step(u_k: GridFunction, i_k: int, problem: InverseProblem, cfg: SolverConfig,
               lambda_max: float | None = None):
    """One update; returns ``(u_next, record)`` with the step scalars."""
    stepper = _Stepper(problem, cfg, cfg.lambda_max if lambda_max is None else lambda_max)
    u_next, r_i, omega, lam, res, full_sq = stepper.step(u_k, i_k)
    record = {"i_k": i_k, "residual": r_i, "omega_k": omega, "lambda_k": lam,
              "residuals": res, "full_residual_sq": full_sq}
    return u_next, record


def run_sdbli(u0: GridFunction, problem: InverseProblem, cfg: SolverConfig,
              consts: EstimatedConstants | None = None) -> IterationTrace:
    lam_cap = effective_lambda_max(cfg, consts)
    stepper = _Stepper(problem, cfg, lam_cap)
    rng = np.random.default_rng(cfg.seed)
    delta = problem.delta_total
    budget, reason = cfg.max_iters, "budget"
    if delta > 0:
        k_delta = a_priori_stop(delta, cfg)
        if k_delta <= cfg.max_iters:
            budget, reason = k_delta, "a_priori"
    period = cfg.freeze_check_period or 2 * problem.P
    truth = problem.u_true
    trace = IterationTrace(deltas=np.asarray(problem.deltas, dtype=float), lambda_max=lam_cap)
    tau_delta = cfg.tau * np.asarray(problem.deltas, dtype=float)

    u = u0
    for k in range(budget):
        i = sample_index(rng, problem.P)
        try:
            u_next, r_i, omega, lam, res, full_sq = stepper.step(u, i)
        except NewtonConvergenceError as exc:
            raise SolverFailure(k, exc) from exc
        err = None if truth is None else weighted_norm(u.values - truth.values, problem.spec)
        trace.k.append(k)
        trace.i_k.append(i)
        trace.residual.append(r_i)
        trace.omega_k.append(omega)
        trace.lambda_k.append(lam)
        trace.err_to_truth.append(err)
        trace.ball_exit.append(bool(cfg.sigma is not None and err is not None and err > cfg.sigma))
        trace.residual_min.append(float(res.min()))
        trace.full_residual_sq.append(full_sq)
        u = u_next
        if (k + 1) % period == 0 and np.all(res <= tau_delta):
            lam_any = lambda_schedule(res, i, cfg, lam_cap) if cfg.lambda_mode == "fast" else 0.0
            if cfg.lambda_mode == "strict" or lam_any < LAMBDA_FLOOR:
                reason = "frozen"
                break
    trace.stop_reason = reason
    trace.u_final = u
    if truth is not None:
        trace.final_err = weighted_norm(u.values - truth.values, problem.spec)
    trace.final_residual_sq = stepper.residuals(u)[3]
    return trace


def validate_trace(trace: IterationTrace, cfg: SolverConfig, tol: float = LAMBDA_FLOOR) -> list[str]:
    """Check gate and lambda-cap contracts record by record; returns violations."""
    problems = []
    deltas = trace.deltas
    for j in range(trace.k_stop):
        i, r, om, lam = trace.i_k[j], trace.residual[j], trace.omega_k[j], trace.lambda_k[j]
        gate_closed = r <= cfg.tau * deltas[i]
        if (om == 0.0) != gate_closed:
            problems.append(f"k={trace.k[j]}: omega={om} but residual={r}, tau*delta={cfg.tau * deltas[i]}")
        base = trace.residual_min[j] if cfg.lambda_mode == "strict" else r
        if lam > cfg.c_lambda * base * base + tol:
            problems.append(f"k={trace.k[j]}: lambda={lam} exceeds c_lambda*r^2")
        if lam > trace.lambda_max + tol:
            problems.append(f"k={trace.k[j]}: lambda={lam} exceeds lambda_max={trace.lambda_max}")
    return problems


def write_trace(trace: IterationTrace, path_prefix, cfg: SolverConfig,
                consts: EstimatedConstants | None = None,
                report: AdmissibilityReport | None = None) -> tuple[str, str]:
    csv_path, json_path = f"{path_prefix}.csv", f"{path_prefix}.json"
    with open(csv_path, "w") as fh:
        fh.write(trace.to_csv())
    with open(json_path, "w") as fh:
        json.dump(trace.sidecar(cfg, consts, report), fh, indent=2)
    return csv_path, json_path


def with_seed(cfg: SolverConfig, seed: int) -> SolverConfig:
    return replace(cfg, seed=seed)

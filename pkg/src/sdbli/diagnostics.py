"""Monte Carlo estimates of expectations over index streams, and checks on them."""

from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .grid import GridFunction, weighted_norm
from .solver import SolverConfig, a_priori_stop, run_sdbli, validate_trace
from .system import EstimatedConstants, InverseProblem


class ReplicationError(RuntimeError):
    def __init__(self, replication: int, seed: int, cause: Exception):
        super().__init__(f"replication {replication} (seed {seed}) failed: {cause}")
        self.replication = replication
        self.seed = seed


def replication_seed(master_seed: int, r: int) -> int:
    """Seed of replication ``r``; independent of how many replications run."""
    return int(np.random.SeedSequence(master_seed, spawn_key=(r,)).generate_state(1, np.uint64)[0])


def _threads() -> int:
    env = os.environ.get("SDBLI_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass(eq=False)
class McSummary:
    R: int
    k: np.ndarray
    mean_sq_err: np.ndarray | None
    stderr_err: np.ndarray | None
    stderr_err_step: np.ndarray | None  # stderr of the paired one-step change
    mean_sq_residual: np.ndarray
    stderr_residual: np.ndarray
    partial_sums: np.ndarray
    initial_sq_err: float | None = None
    stop_reasons: list = field(default_factory=list)
    k_stops: list = field(default_factory=list)
    trace_violations: list = field(default_factory=list)
    seeds: list = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "mean_sq_err", "stderr_err", "mean_sq_residual", "stderr_residual", "partial_sum"])
        for j, k in enumerate(self.k):
            err = "" if self.mean_sq_err is None else repr(float(self.mean_sq_err[j]))
            se = "" if self.stderr_err is None else repr(float(self.stderr_err[j]))
            w.writerow([int(k), err, se, repr(float(self.mean_sq_residual[j])),
                        repr(float(self.stderr_residual[j])), repr(float(self.partial_sums[j]))])
        return buf.getvalue()

    def metadata(self) -> dict:
        return {
            "R": self.R,
            "seeds": self.seeds,
            "stop_reasons": self.stop_reasons,
            "k_stops": self.k_stops,
            "initial_sq_err": self.initial_sq_err,
            "trace_violations": len(self.trace_violations),
        }


def _one_replication(args):
    r, u0, problem, cfg, consts = args
    try:
        trace = run_sdbli(u0, problem, cfg, consts)
    except Exception as exc:  # reported with its seed by the caller
        return r, cfg.seed, None, exc
    if problem.u_true is not None:
        err = np.array(trace.err_to_truth + [trace.final_err], dtype=float)
    else:
        err = None
    res = np.array(trace.full_residual_sq + [trace.final_residual_sq], dtype=float)
    out = {
        "err_sq": None if err is None else err**2,
        "res_sq": res,
        "stop_reason": trace.stop_reason,
        "k_stop": trace.k_stop,
        "violations": validate_trace(trace, cfg),
    }
    return r, cfg.seed, out, None


def _pad(rows: list[np.ndarray]) -> np.ndarray:
    # a frozen run is stationary, so repeat its last value
    length = max(len(r) for r in rows)
    return np.vstack([np.concatenate([r, np.full(length - len(r), r[-1])]) for r in rows])


def _stderr(a: np.ndarray) -> np.ndarray:
    R = a.shape[0]
    return a.std(axis=0, ddof=1) / np.sqrt(R)


def monte_carlo(u0: GridFunction, problem: InverseProblem, cfg: SolverConfig, R: int,
                record_full_residual_every: int = 10,
                consts: EstimatedConstants | None = None,
                threads: int | None = None) -> McSummary:
    """Run ``R`` replications with seeds derived from ``cfg.seed`` and average.

    Every step already solves the full PDE, so residuals of all equations are
    known at each step; partial sums use every step and the stored arrays are
    thinned to every ``record_full_residual_every``-th iterate.
    """
    if R < 2:
        raise ValueError("R must be >= 2")
    seeds = [replication_seed(cfg.seed, r) for r in range(R)]
    jobs = [(r, u0, problem, replace(cfg, seed=s), consts) for r, s in enumerate(seeds)]
    workers = min(threads or _threads(), R)
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_one_replication, jobs))
    else:
        results = [_one_replication(j) for j in jobs]

    results.sort(key=lambda t: t[0])
    for r, seed, out, exc in results:
        if exc is not None:
            raise ReplicationError(r, seed, exc) from exc
    outs = [t[2] for t in results]

    res = _pad([o["res_sq"] for o in outs])
    step = max(1, int(record_full_residual_every))
    idx = np.arange(0, res.shape[1], step)
    if idx[-1] != res.shape[1] - 1:
        idx = np.append(idx, res.shape[1] - 1)
    partial = np.cumsum(res.mean(axis=0))

    mean_err = se_err = se_step = None
    init = None
    if outs[0]["err_sq"] is not None:
        err = _pad([o["err_sq"] for o in outs])
        mean_err = err.mean(axis=0)[idx]
        se_err = _stderr(err)[idx]
        diffs = err[:, idx[1:]] - err[:, idx[:-1]]
        se_step = _stderr(diffs) if diffs.shape[1] else np.zeros(0)
        init = float(err[:, 0].mean())

    violations = [(r, v) for r, o in enumerate(outs) for v in o["violations"]]
    return McSummary(
        R=R, k=idx, mean_sq_err=mean_err, stderr_err=se_err, stderr_err_step=se_step,
        mean_sq_residual=res.mean(axis=0)[idx], stderr_residual=_stderr(res)[idx],
        partial_sums=partial[idx], initial_sq_err=init,
        stop_reasons=[o["stop_reason"] for o in outs], k_stops=[o["k_stop"] for o in outs],
        trace_violations=violations, seeds=seeds,
    )


# -- checks ------------------------------------------------------------------

@dataclass(frozen=True)
class MonotonicityReport:
    violations: tuple[int, ...]
    max_excess: float
    slack: float
    n_sigma: float

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def first_violation(self) -> int | None:
        return self.violations[0] if self.violations else None

    def to_dict(self) -> dict:
        return {"ok": self.ok, "violations": list(self.violations), "first_violation": self.first_violation,
                "max_excess": self.max_excess, "slack": self.slack, "n_sigma": self.n_sigma}


def check_monotonicity(s: McSummary, slack: float = 1e-3, n_sigma: float = 3.0) -> MonotonicityReport:
    """Flag ``k`` with ``E[e_{k+1}] > E[e_k] (1 + slack) + n_sigma * stderr``.

    The stderr is that of the paired difference ``e_{k+1} - e_k`` across
    replications when available, otherwise the two marginal stderrs combined.
    """
    if s.mean_sq_err is None:
        raise ValueError("summary carries no error-to-truth data")
    m = s.mean_sq_err
    if s.stderr_err_step is not None and len(s.stderr_err_step) == len(m) - 1:
        se = s.stderr_err_step
    else:
        se = np.sqrt(s.stderr_err[1:] ** 2 + s.stderr_err[:-1] ** 2)
    excess = m[1:] - (m[:-1] * (1.0 + slack) + n_sigma * se)
    bad = tuple(int(s.k[j + 1]) for j in np.flatnonzero(excess > 0))
    return MonotonicityReport(bad, float(excess.max()) if excess.size else 0.0, slack, n_sigma)


@dataclass(frozen=True)
class SummabilityReport:
    applicable: bool
    bound: float
    max_ratio: float
    violations: tuple[int, ...]
    C_tilde_F: float

    @property
    def ok(self) -> bool:
        return self.applicable and not self.violations

    def to_dict(self) -> dict:
        return {"ok": self.ok, "applicable": self.applicable, "bound": self.bound,
                "max_ratio": self.max_ratio, "violations": list(self.violations),
                "C_tilde_F": self.C_tilde_F}


def check_summability(s: McSummary, C_tilde_F: float, initial_sq_dist: float) -> SummabilityReport:
    """Compare residual partial sums with ``|u0 - u_hat|^2 / C_tilde_F``."""
    if not C_tilde_F > 0:
        return SummabilityReport(False, float("inf"), float("nan"), (), C_tilde_F)
    bound = initial_sq_dist / C_tilde_F
    ratio = s.partial_sums / bound
    bad = tuple(int(s.k[j]) for j in np.flatnonzero(ratio > 1.0))
    return SummabilityReport(True, bound, float(ratio.max()), bad, C_tilde_F)


@dataclass(frozen=True)
class SweepRow:
    delta: float
    k_delta: int
    terminal_mean_sq_err: float
    stderr: float
    stop_reasons: tuple[str, ...]
    trace_violations: int = 0


@dataclass(frozen=True)
class SweepTable:
    rows: tuple[SweepRow, ...]
    violations: tuple[int, ...]  # row indices where the error grew beyond tolerance

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["delta", "k_delta", "terminal_mean_sq_err", "stderr"])
        for row in self.rows:
            w.writerow([repr(row.delta), row.k_delta, repr(row.terminal_mean_sq_err), repr(row.stderr)])
        return buf.getvalue()


def noise_sweep(u0: GridFunction, build_problem: Callable[[float], InverseProblem],
                cfg: SolverConfig, deltas: Sequence[float], R: int,
                consts: EstimatedConstants | None = None, n_sigma: float = 3.0,
                threads: int | None = None) -> SweepTable:
    """Terminal ``E|u_k(delta) - u_true|^2`` under a-priori stopping, per noise level."""
    deltas = [float(d) for d in deltas]
    if any(d <= 0 for d in deltas) or any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise ValueError("deltas must be positive and strictly decreasing")
    rows = []
    for d in deltas:
        problem = build_problem(d)
        k_d = a_priori_stop(problem.delta_total, cfg)
        run_cfg = replace(cfg, max_iters=max(cfg.max_iters, k_d))
        s = monte_carlo(u0, problem, run_cfg, R, record_full_residual_every=max(1, k_d),
                        consts=consts, threads=threads)
        rows.append(SweepRow(d, k_d, float(s.mean_sq_err[-1]), float(s.stderr_err[-1]),
                             tuple(s.stop_reasons), len(s.trace_violations)))
    bad = tuple(
        j + 1 for j, (a, b) in enumerate(zip(rows, rows[1:]))
        if b.terminal_mean_sq_err > a.terminal_mean_sq_err + n_sigma * np.hypot(a.stderr, b.stderr)
    )
    return SweepTable(tuple(rows), bad)


def sq_distance(a: GridFunction, b: GridFunction) -> float:
    return weighted_norm(a.values - b.values, a.spec) ** 2

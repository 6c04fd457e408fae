"""The P-equation system F_i = R_i o F built from one PDE solve.

Each F_i observes the state on one cell of a disjoint partition of the grid.
A "block" is a GridFunction that vanishes off its mask, so the restriction
adjoint R_i^* is plain zero extension and block inner products are ordinary
grid inner products.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .forward import (
    NewtonConfig,
    StateSolution,
    apply_subderivative,
    apply_subderivative_adjoint,
    solve_forward,
)
from .grid import GridFunction, GridSpec, norm, weighted_norm

Scheme = Literal["stripes", "blocks"]
TruthKind = Literal["gaussian_bumps", "random_fourier"]

NORM_RANGE = (0.1, 10.0)


class ConfigurationError(ValueError):
    pass


class EstimationError(RuntimeError):
    pass


# -- partition ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ObservationPartition:
    spec: GridSpec
    masks: tuple[np.ndarray, ...] = field(repr=False)
    scheme: str = "stripes"

    @property
    def P(self) -> int:
        return len(self.masks)

    def restrict(self, i: int, values: np.ndarray) -> np.ndarray:
        return np.where(self.masks[i], values, 0.0)


def _tile_shape(P: int, n: int) -> tuple[int, int]:
    # most square factorization P = rows * cols that fits the grid
    best = None
    for rows in range(1, P + 1):
        if P % rows:
            continue
        cols = P // rows
        if rows <= n and cols <= n:
            score = abs(rows - cols)
            if best is None or score < best[0]:
                best = (score, rows, cols)
    if best is None:
        raise ConfigurationError(f"P={P} cannot be tiled on an {n}x{n} grid")
    return best[1], best[2]


def make_partition(spec: GridSpec, P: int, scheme: Scheme = "stripes") -> ObservationPartition:
    n = spec.n
    if P < 1 or P > spec.size:
        raise ConfigurationError(f"P={P} must lie in [1, {spec.size}]")
    rows = np.arange(spec.size) // n
    cols = np.arange(spec.size) % n
    masks = []
    if scheme == "stripes":
        if P > n:
            raise ConfigurationError(f"stripes need P <= n, got P={P}, n={n}")
        for band in np.array_split(np.arange(n), P):
            masks.append(np.isin(rows, band))
    elif scheme == "blocks":
        tr, tc = _tile_shape(P, n)
        for rband in np.array_split(np.arange(n), tr):
            for cband in np.array_split(np.arange(n), tc):
                masks.append(np.isin(rows, rband) & np.isin(cols, cband))
    else:
        raise ConfigurationError(f"unknown partition scheme {scheme!r}")
    for m in masks:
        m.setflags(write=False)
    return ObservationPartition(spec, tuple(masks), scheme)


# -- system operators --------------------------------------------------------

def apply_F_i(i: int, u: GridFunction, part: ObservationPartition,
              cfg: NewtonConfig = NewtonConfig()) -> GridFunction:
    if not 0 <= i < part.P:
        raise IndexError(f"equation index {i} outside [0, {part.P})")
    y = solve_forward(u, cfg).y
    return GridFunction(u.spec, part.restrict(i, y.values))


def apply_G_i(i: int, base: StateSolution, hdir: GridFunction,
              part: ObservationPartition) -> GridFunction:
    v = apply_subderivative(base, hdir)
    return GridFunction(v.spec, part.restrict(i, v.values))


def apply_G_i_adjoint(i: int, base: StateSolution, w_block: GridFunction,
                      part: ObservationPartition) -> GridFunction:
    # zero extension of the block is the block itself; re-mask to drop stray values
    w = GridFunction(w_block.spec, part.restrict(i, w_block.values))
    return apply_subderivative_adjoint(base, w)


# -- synthetic truth and data ------------------------------------------------

def _raw_field(spec: GridSpec, kind: str, rng: np.random.Generator) -> np.ndarray:
    x, y = spec.coordinates()
    if kind == "gaussian_bumps":
        out = np.zeros(spec.size)
        for _ in range(rng.integers(2, 5)):
            cx, cy = rng.uniform(0.2, 0.8, size=2)
            width = rng.uniform(0.08, 0.2)
            amp = rng.uniform(-1.0, 1.0)
            out += amp * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * width**2))
        return out
    if kind == "random_fourier":
        out = np.zeros(spec.size)
        for k in range(1, 5):
            for l in range(1, 5):
                out += rng.standard_normal() / (k * k + l * l) * np.sin(k * np.pi * x) * np.sin(l * np.pi * y)
        return out
    raise ConfigurationError(f"unknown truth kind {kind!r}")


def synthesize_truth(spec: GridSpec, kind: TruthKind = "gaussian_bumps", seed=0,
                     target_norm: float = 1.0) -> GridFunction:
    """Smooth random source, rescaled to ``norm == target_norm``."""
    lo, hi = NORM_RANGE
    if not lo <= target_norm <= hi:
        raise ConfigurationError(f"target_norm must lie in [{lo}, {hi}]")
    rng = np.random.default_rng(seed)
    for _ in range(100):
        raw = _raw_field(spec, kind, rng)
        nrm = weighted_norm(raw, spec)
        if nrm > 1e-14:
            return GridFunction(spec, raw * (target_norm / nrm))
    raise RuntimeError("generator kept producing a null field")


@dataclass(frozen=True, eq=False)
class ExactData:
    u_true: GridFunction
    y_full: GridFunction
    y_parts: tuple[GridFunction, ...]


@dataclass(frozen=True, eq=False)
class NoisyData:
    y_delta_parts: tuple[GridFunction, ...]
    deltas: np.ndarray
    seed: int | None = None

    @property
    def delta_total(self) -> float:
        return float(np.sqrt(np.sum(np.square(self.deltas))))


def make_exact_data(u_true: GridFunction, part: ObservationPartition,
                    cfg: NewtonConfig = NewtonConfig()) -> ExactData:
    y = solve_forward(u_true, cfg).y
    parts = tuple(GridFunction(y.spec, part.restrict(i, y.values)) for i in range(part.P))
    return ExactData(u_true, y, parts)


def split_delta(delta_total: float, P: int) -> np.ndarray:
    """Equal split with ``sum(delta_i^2) == delta_total^2``."""
    return np.full(P, delta_total / np.sqrt(P))


def add_noise(exact: ExactData, part: ObservationPartition, delta_i: Sequence[float],
              seed=0) -> NoisyData:
    deltas = np.asarray(delta_i, dtype=float)
    if deltas.shape != (part.P,):
        raise ConfigurationError(f"need {part.P} noise levels, got {deltas.shape}")
    if np.any(deltas < 0):
        raise ConfigurationError("noise levels must be non-negative")
    spec = exact.y_full.spec
    children = np.random.SeedSequence(seed).spawn(part.P)
    out = []
    for i, (yi, d) in enumerate(zip(exact.y_parts, deltas)):
        if d == 0:
            out.append(yi)
            continue
        rng = np.random.default_rng(children[i])
        while True:
            e = part.restrict(i, rng.standard_normal(spec.size))
            enorm = weighted_norm(e, spec)
            if enorm > 0:
                break
        out.append(GridFunction(spec, yi.values + (d / enorm) * e))
    return NoisyData(tuple(out), deltas, seed)


# -- problem handle ----------------------------------------------------------

@dataclass(eq=False)
class InverseProblem:
    """Everything one SDBLI run needs besides its configuration."""

    part: ObservationPartition
    y_delta: tuple[GridFunction, ...]
    deltas: np.ndarray
    newton: NewtonConfig = field(default_factory=NewtonConfig)
    operators: tuple | None = None  # DataDrivenOperator per equation
    u_true: GridFunction | None = None

    @property
    def spec(self) -> GridSpec:
        return self.part.spec

    @property
    def P(self) -> int:
        return self.part.P

    @property
    def delta_total(self) -> float:
        return float(np.sqrt(np.sum(np.square(self.deltas))))

    @property
    def y_delta_full(self) -> np.ndarray:
        return np.sum([b.values for b in self.y_delta], axis=0)


# -- assumption constants ----------------------------------------------------

@dataclass(frozen=True)
class EstimatedConstants:
    L_F: float
    L_M: float
    mu_hat: float
    C_M_delta: float
    C_N_hat: float
    n_samples: int = 0
    n_pairs: int = 0

    def __post_init__(self):
        for name in ("L_F", "L_M", "mu_hat", "C_M_delta", "C_N_hat"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class SamplingRegion:
    """Ball of smooth perturbations around ``center`` with radius ``radius``."""

    center: GridFunction
    radius: float
    kinds: tuple[str, ...] = ("gaussian_bumps", "random_fourier")
    include_center: bool = True

    def samples(self, n_samples: int, seed) -> list[GridFunction]:
        spec = self.center.spec
        out = [self.center] if self.include_center else []
        for j in range(n_samples - len(out)):
            rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0, j)))
            kind = self.kinds[j % len(self.kinds)]
            raw = _raw_field(spec, kind, rng)
            r = self.radius * rng.uniform(0.0, 1.0)
            out.append(self.center + GridFunction(spec, raw * (r / weighted_norm(raw, spec))))
        return out


def _operator_norm_G(base: StateSolution, rng: np.random.Generator, iters: int = 30) -> float:
    spec = base.y.spec
    h = GridFunction(spec, rng.standard_normal(spec.size))
    best = 0.0
    for _ in range(iters):
        gh = apply_subderivative(base, h)
        best = max(best, norm(gh) / norm(h))
        h = gh * (1.0 / norm(gh))
    return best


def estimate_constants(part: ObservationPartition, region: SamplingRegion, n_samples: int,
                       seed=0, cfg: NewtonConfig = NewtonConfig(), operators=None,
                       y_delta: Sequence[GridFunction] | None = None,
                       exact: ExactData | None = None) -> EstimatedConstants:
    """Empirical maxima/minima of the constants over samples from ``region``.

    ``L_F`` comes from power iteration on each sampled ``G(u)`` (the restricted
    ``G_i`` have no larger norm); ``mu_hat`` is the largest tangential-cone ratio
    over all ordered sample pairs and all equations.
    """
    if n_samples < 2:
        raise ConfigurationError("n_samples must be >= 2")
    us = region.samples(n_samples, seed)
    states = [solve_forward(u, cfg) for u in us]
    L_F = max(
        _operator_norm_G(st, np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, j))))
        for j, st in enumerate(states)
    )

    mu_hat = 0.0
    n_pairs = 0
    for a, (ua, sa) in enumerate(zip(us, states)):
        for b, (ub, sb) in enumerate(zip(us, states)):
            if a == b:
                continue
            dF = sa.y.values - sb.y.values
            lin = apply_subderivative(sa, ua - ub).values
            for i in range(part.P):
                den = weighted_norm(part.restrict(i, dF), part.spec)
                if den < 1e-12:
                    continue
                num = weighted_norm(part.restrict(i, dF - lin), part.spec)
                mu_hat = max(mu_hat, num / den)
                n_pairs += 1
    if n_pairs == 0:
        raise EstimationError("every sampled pair was degenerate")

    L_M = C_M = C_N = 0.0
    if operators is not None:
        L_M = max(op.operator_norm() for op in operators)
        if y_delta is not None:
            C_M = max(
                norm(op.apply(u) - y_delta[i]) for u in us for i, op in enumerate(operators)
            )
        if exact is not None:
            C_N = min(norm(op.apply(exact.u_true) - exact.y_parts[i]) for i, op in enumerate(operators))
    return EstimatedConstants(L_F, L_M, mu_hat, C_M, C_N, n_samples=len(us), n_pairs=n_pairs)


# -- serialization -----------------------------------------------------------

def _vals(g: GridFunction) -> list[float]:
    return [float(x) for x in g.values]


def exact_to_dict(exact: ExactData, part: ObservationPartition, truth_seed=None) -> dict:
    return {
        "n": part.spec.n,
        "P": part.P,
        "scheme": part.scheme,
        "truth_seed": truth_seed,
        "u_true": _vals(exact.u_true),
        "y_full": _vals(exact.y_full),
        "y_parts": [_vals(b) for b in exact.y_parts],
    }


def exact_from_dict(d: dict) -> tuple[ExactData, ObservationPartition]:
    spec = GridSpec(int(d["n"]))
    part = make_partition(spec, int(d["P"]), d["scheme"])
    ex = ExactData(
        GridFunction(spec, d["u_true"]),
        GridFunction(spec, d["y_full"]),
        tuple(GridFunction(spec, v) for v in d["y_parts"]),
    )
    return ex, part


def noisy_to_dict(noisy: NoisyData, part: ObservationPartition) -> dict:
    return {
        "n": part.spec.n,
        "P": part.P,
        "scheme": part.scheme,
        "seed": noisy.seed,
        "deltas": [float(x) for x in noisy.deltas],
        "delta_total": noisy.delta_total,
        "y_delta_parts": [_vals(b) for b in noisy.y_delta_parts],
    }


def noisy_from_dict(d: dict) -> NoisyData:
    spec = GridSpec(int(d["n"]))
    return NoisyData(
        tuple(GridFunction(spec, v) for v in d["y_delta_parts"]),
        np.asarray(d["deltas"], dtype=float),
        d.get("seed"),
    )

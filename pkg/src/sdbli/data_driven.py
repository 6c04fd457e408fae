"""Linear surrogates M_i fitted to training pairs by a truncated-SVD pseudoinverse."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .forward import NewtonConfig, solve_forward
from .grid import GridFunction, GridSpec
from .system import ObservationPartition, synthesize_truth


class DegenerateTrainingError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TrainingSet:
    inputs: tuple[GridFunction, ...]
    outputs: tuple[tuple[GridFunction, ...], ...]  # outputs[i][l] = F_i(u^(l))
    seed: int | None = None

    @property
    def N(self) -> int:
        return len(self.inputs)


def generate_training(part: ObservationPartition, N: int, kind: str = "gaussian_bumps", seed=0,
                      cfg: NewtonConfig = NewtonConfig(), include: GridFunction | None = None,
                      target_norm: float = 1.0) -> TrainingSet:
    """N random sources with one forward solve each.

    Source ``l`` uses the seed ``SeedSequence(seed, spawn_key=(l,))``; ``include``
    (typically the true source) replaces the last sample when given.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    spec = part.spec
    inputs = [
        synthesize_truth(spec, kind, np.random.SeedSequence(seed, spawn_key=(l,)), target_norm)
        for l in range(N)
    ]
    if include is not None:
        inputs[-1] = include
    states = [solve_forward(u, cfg).y.values for u in inputs]
    outputs = tuple(
        tuple(GridFunction(spec, part.restrict(i, y)) for y in states) for i in range(part.P)
    )
    return TrainingSet(tuple(inputs), outputs, seed)


@dataclass(frozen=True, eq=False)
class DataDrivenOperator:
    """Dense map from grid values to the values of equation ``i``'s block.

    ``matrix`` has one row per node of ``mask`` (row-major order).  Inner
    products on both sides carry the same ``h^2`` weight, so the weighted
    adjoint is the plain transpose.
    """

    i: int
    spec: GridSpec
    mask: np.ndarray = field(repr=False)
    matrix: np.ndarray = field(repr=False)
    singular_values: np.ndarray = field(repr=False)
    rank_used: int
    trunc_tol: float

    def apply(self, u: GridFunction) -> GridFunction:
        out = np.zeros(self.spec.size)
        out[self.mask] = self.matrix @ u.values
        return GridFunction(self.spec, out)

    def adjoint(self, w: GridFunction) -> GridFunction:
        return GridFunction(self.spec, self.matrix.T @ w.values[self.mask])

    def operator_norm(self) -> float:
        return float(np.linalg.norm(self.matrix, 2))


def build_data_driven(ts: TrainingSet, i: int, part: ObservationPartition,
                      trunc_tol: float = 1e-12) -> DataDrivenOperator:
    """``M_i = Y_i V^+`` with ``V`` the training inputs stacked column-wise."""
    if trunc_tol < 0:
        raise ValueError("trunc_tol must be non-negative")
    mask = part.masks[i]
    V = np.column_stack([u.values for u in ts.inputs])
    Y = np.column_stack([y.values[mask] for y in ts.outputs[i]])
    U, s, Wt = np.linalg.svd(V, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        raise DegenerateTrainingError("training inputs are all zero")
    keep = s > trunc_tol * s[0]
    r = int(np.count_nonzero(keep))
    if r == 0:
        raise DegenerateTrainingError("every singular value was truncated")
    V_pinv = (Wt[:r].T / s[:r]) @ U[:, :r].T
    return DataDrivenOperator(i, part.spec, mask, Y @ V_pinv, s, r, trunc_tol)


def build_all(ts: TrainingSet, part: ObservationPartition, trunc_tol: float = 1e-12):
    return tuple(build_data_driven(ts, i, part, trunc_tol) for i in range(part.P))


def apply_M_i(op: DataDrivenOperator, u: GridFunction) -> GridFunction:
    return op.apply(u)


def apply_M_i_adjoint(op: DataDrivenOperator, w: GridFunction) -> GridFunction:
    return op.adjoint(w)


# -- persistence -------------------------------------------------------------

def operator_to_dict(op: DataDrivenOperator) -> dict:
    return {
        "i": op.i,
        "n": op.spec.n,
        "mask": np.flatnonzero(op.mask).tolist(),
        "shape": list(op.matrix.shape),
        "rank_used": op.rank_used,
        "trunc_tol": op.trunc_tol,
        "singular_values": [float(x) for x in op.singular_values],
        "matrix": [float(x) for x in op.matrix.ravel()],
    }


def operator_from_dict(d: dict) -> DataDrivenOperator:
    spec = GridSpec(int(d["n"]))
    mask = np.zeros(spec.size, dtype=bool)
    mask[d["mask"]] = True
    matrix = np.asarray(d["matrix"], dtype=float).reshape(d["shape"])
    return DataDrivenOperator(int(d["i"]), spec, mask, matrix,
                              np.asarray(d["singular_values"], dtype=float),
                              int(d["rank_used"]), float(d["trunc_tol"]))


def operator_to_json(op: DataDrivenOperator) -> str:
    return json.dumps(operator_to_dict(op))


def operator_from_json(text: str) -> DataDrivenOperator:
    return operator_from_dict(json.loads(text))


def training_to_dict(ts: TrainingSet, part: ObservationPartition) -> dict:
    return {
        "n": part.spec.n,
        "P": part.P,
        "N": ts.N,
        "seed": ts.seed,
        "inputs": [[float(x) for x in u.values] for u in ts.inputs],
        # full state per sample; blocks are recovered by masking
        "states": [[float(x) for x in np.sum([ts.outputs[i][l].values for i in range(part.P)], axis=0)]
                   for l in range(ts.N)],
    }


def training_from_dict(d: dict, part: ObservationPartition) -> TrainingSet:
    spec = part.spec
    inputs = tuple(GridFunction(spec, v) for v in d["inputs"])
    states = [np.asarray(v, dtype=float) for v in d["states"]]
    outputs = tuple(
        tuple(GridFunction(spec, part.restrict(i, y)) for y in states) for i in range(part.P)
    )
    return TrainingSet(inputs, outputs, d.get("seed"))

"""Uniform grids on the unit square, discrete L2 geometry and the 5-point Laplacian.

Fields live on the ``n x n`` interior nodes, stored row-major; the homogeneous
Dirichlet boundary is implicit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp


class ShapeError(ValueError):
    """Raised when grid functions on different grids are combined."""


@dataclass(frozen=True)
class GridSpec:
    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n!r}")

    @property
    def h(self) -> float:
        return 1.0 / (self.n + 1)

    @property
    def size(self) -> int:
        return self.n * self.n

    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """Node coordinates ``(x, y)`` as flat row-major arrays (row index -> y)."""
        t = self.h * np.arange(1, self.n + 1)
        yy, xx = np.meshgrid(t, t, indexing="ij")
        return xx.ravel(), yy.ravel()


@dataclass(frozen=True, eq=False)
class GridFunction:
    spec: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=float).reshape(-1)
        if v.size != self.spec.size:
            raise ShapeError(f"expected {self.spec.size} values for n={self.spec.n}, got {v.size}")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid function has non-finite entries")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, spec: GridSpec) -> "GridFunction":
        return cls(spec, np.zeros(spec.size))

    @classmethod
    def constant(cls, spec: GridSpec, c: float) -> "GridFunction":
        return cls(spec, np.full(spec.size, float(c)))

    def as_matrix(self) -> np.ndarray:
        return self.values.reshape(self.spec.n, self.spec.n)

    def _check(self, other: "GridFunction") -> None:
        if other.spec != self.spec:
            raise ShapeError(f"grid mismatch: n={self.spec.n} vs n={other.spec.n}")

    def __add__(self, other: "GridFunction") -> "GridFunction":
        self._check(other)
        return GridFunction(self.spec, self.values + other.values)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        self._check(other)
        return GridFunction(self.spec, self.values - other.values)

    def __mul__(self, c: float) -> "GridFunction":
        return GridFunction(self.spec, float(c) * self.values)

    __rmul__ = __mul__

    def __neg__(self) -> "GridFunction":
        return GridFunction(self.spec, -self.values)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GridFunction):
            return NotImplemented
        return self.spec == other.spec and np.array_equal(self.values, other.values)

    __hash__ = None


def inner(a: GridFunction, b: GridFunction) -> float:
    """Discrete L2 inner product ``h^2 * sum(a * b)``."""
    if a.spec != b.spec:
        raise ShapeError(f"grid mismatch: n={a.spec.n} vs n={b.spec.n}")
    return a.spec.h**2 * float(np.dot(a.values, b.values))


def norm(a: GridFunction) -> float:
    return a.spec.h * float(np.linalg.norm(a.values))


def weighted_norm(values: np.ndarray, spec: GridSpec) -> float:
    """``norm`` on a raw value array, for hot loops that skip the wrapper."""
    return spec.h * float(np.linalg.norm(values))


@lru_cache(maxsize=16)
def laplacian_matrix(n: int) -> sp.csc_matrix:
    """Sparse matrix of -Delta_h on the n x n interior grid (zero Dirichlet data)."""
    h = 1.0 / (n + 1)
    one_d = sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(n, n))
    eye = sp.identity(n)
    mat = (sp.kron(eye, one_d) + sp.kron(one_d, eye)) / h**2
    mat = mat.tocsc()
    mat.sort_indices()
    return mat


def apply_laplacian(a: GridFunction) -> GridFunction:
    """Return ``-Delta_h a`` using the 5-point stencil with zero extension."""
    n = a.spec.n
    padded = np.zeros((n + 2, n + 2))
    padded[1:-1, 1:-1] = a.as_matrix()
    out = (
        4.0 * padded[1:-1, 1:-1]
        - padded[:-2, 1:-1]
        - padded[2:, 1:-1]
        - padded[1:-1, :-2]
        - padded[1:-1, 2:]
    ) / a.spec.h**2
    return GridFunction(a.spec, out.ravel())


# -- serialization -----------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))  # shortest round-trip repr, exact for binary64


def to_csv(a: GridFunction) -> str:
    return "".join(_fmt(x) + "\n" for x in a.values)


def from_csv(text: str, n: int | None = None) -> GridFunction:
    values = np.array([float(line) for line in text.split() if line.strip()])
    if n is None:
        n = int(round(np.sqrt(values.size)))
    return GridFunction(GridSpec(n), values)


def to_json_dict(a: GridFunction) -> dict:
    return {"n": a.spec.n, "values": [float(x) for x in a.values]}


def from_json_dict(d: dict) -> GridFunction:
    return GridFunction(GridSpec(int(d["n"])), np.asarray(d["values"], dtype=float))


def to_json(a: GridFunction) -> str:
    return json.dumps(to_json_dict(a))


def from_json(text: str) -> GridFunction:
    return from_json_dict(json.loads(text))

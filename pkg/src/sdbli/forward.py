"""Forward solver for -Delta_h y + max(y, 0) = u and its Bouligand subderivative.

The state equation is piecewise linear, so a semismooth Newton (active-set)
iteration terminates once the active set repeats.  The subderivative at a
solution uses the same active set: ``G(u) h = (-Delta_h + D_A)^{-1} h`` with
``D_A`` the 0/1 indicator of ``{y > 0}``.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import GridFunction, GridSpec, ShapeError, laplacian_matrix, weighted_norm

DIRECT_SOLVE_MAX_N = 64
CG_RTOL = 1e-13


class NewtonConvergenceError(RuntimeError):
    def __init__(self, iterations: int, residual: float):
        super().__init__(f"semismooth Newton did not converge in {iterations} iterations "
                         f"(last residual {residual:.3e})")
        self.iterations = iterations
        self.residual = residual


class OracleFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class NewtonConfig:
    newton_tol: float = 1e-12
    max_newton_iters: int = 100

    def __post_init__(self):
        if not self.newton_tol > 0:
            raise ValueError("newton_tol must be positive")
        if self.max_newton_iters < 1:
            raise ValueError("max_newton_iters must be >= 1")


@dataclass(frozen=True, eq=False)
class StateSolution:
    y: GridFunction
    active: np.ndarray = field(repr=False)
    newton_iters: int
    residual_norm: float


# -- linear solves with (-Delta_h + D_A) ---------------------------------------

class _ShiftedLaplacianSolver:
    """Solves ``(-Delta_h + D_A) x = b`` for varying active sets ``A``.

    Factorizations are cached by active set; along an iteration the active set
    changes rarely, so most solves are a single triangular sweep.
    """

    def __init__(self, n: int, cache_size: int = 512):
        self.n = n
        self.K = laplacian_matrix(n)
        self.cache_size = cache_size
        self._cache: OrderedDict[bytes, object] = OrderedDict()

    def _factor(self, active: np.ndarray):
        key = np.packbits(active).tobytes()
        lu = self._cache.get(key)
        if lu is not None:
            self._cache.move_to_end(key)
            return lu
        mat = (self.K + sp.diags(active.astype(float))).tocsc()
        lu = spla.splu(mat, permc_spec="MMD_AT_PLUS_A")
        self._cache[key] = lu
        if len(self._cache) > self.cache_size:
            self._cache.popitem(last=False)
        return lu

    def solve(self, active: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        if self.n <= DIRECT_SOLVE_MAX_N:
            return self._factor(active).solve(rhs)
        mat = (self.K + sp.diags(active.astype(float))).tocsr()
        x, info = spla.cg(mat, rhs, rtol=CG_RTOL, atol=0.0, maxiter=20 * self.n * self.n)
        if info != 0:
            raise RuntimeError(f"CG failed to converge (info={info})")
        return x


_SOLVERS: dict[int, _ShiftedLaplacianSolver] = {}


def _solver(n: int) -> _ShiftedLaplacianSolver:
    s = _SOLVERS.get(n)
    if s is None:
        s = _SOLVERS[n] = _ShiftedLaplacianSolver(n)
    return s


def state_residual(y: np.ndarray, u: np.ndarray, spec: GridSpec) -> float:
    """Weighted norm of ``-Delta_h y + y^+ - u``."""
    r = laplacian_matrix(spec.n) @ y + np.maximum(y, 0.0) - u
    return weighted_norm(r, spec)


# -- forward map -------------------------------------------------------------

def solve_forward(u: GridFunction, cfg: NewtonConfig = NewtonConfig()) -> StateSolution:
    """Solve ``-Delta_h y + max(y, 0) = u`` by active-set switching from ``A = {}``."""
    spec = u.spec
    solver = _solver(spec.n)
    rhs = u.values
    tol = cfg.newton_tol * max(1.0, weighted_norm(rhs, spec))

    active = np.zeros(spec.size, dtype=bool)
    res = np.inf
    for it in range(1, cfg.max_newton_iters + 1):
        y = solver.solve(active, rhs)
        new_active = y > 0.0
        if np.array_equal(new_active, active):
            res = state_residual(y, rhs, spec)
            # one refinement sweep if the factorization left the certificate short
            if res > tol:
                r = rhs - (solver.K @ y + np.maximum(y, 0.0))
                y = y + solver.solve(active, r)
                if np.array_equal(y > 0.0, active):
                    res = state_residual(y, rhs, spec)
            if res <= tol:
                return StateSolution(GridFunction(spec, y), active, it, res)
        else:
            res = state_residual(y, rhs, spec)
        active = new_active
    raise NewtonConvergenceError(cfg.max_newton_iters, res)


def _dense_laplacian(n: int) -> np.ndarray:
    """Assemble -Delta_h entry by entry; independent of the sparse kron assembly."""
    h2 = (1.0 / (n + 1)) ** 2
    mat = np.zeros((n * n, n * n))
    for r in range(n):
        for c in range(n):
            j = r * n + c
            mat[j, j] = 4.0 / h2
            for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
                if 0 <= rr < n and 0 <= cc < n:
                    mat[j, rr * n + cc] = -1.0 / h2
    return mat


def fixed_point_oracle(u: GridFunction, alpha: float = 0.5, tol: float = 1e-12,
                       max_iters: int = 1_000_000) -> GridFunction:
    """Damped Picard iteration ``y <- (1-a) y + a (-Delta_h)^{-1} (u - y^+)``.

    Reference solution for testing ``solve_forward``; uses a dense Cholesky
    factorization of an independently assembled Laplacian.
    """
    spec = u.spec
    chol = sla.cho_factor(_dense_laplacian(spec.n))
    y = np.zeros(spec.size)
    for _ in range(max_iters):
        y_new = (1.0 - alpha) * y + alpha * sla.cho_solve(chol, u.values - np.maximum(y, 0.0))
        change = weighted_norm(y_new - y, spec)
        y = y_new
        if change < tol:
            return GridFunction(spec, y)
    raise OracleFailure(f"fixed-point oracle exceeded {max_iters} iterations")


# -- subderivative -----------------------------------------------------------

def apply_subderivative(base: StateSolution, hdir: GridFunction) -> GridFunction:
    """``G(u) h``: solve ``(-Delta_h + D_A) v = h`` with ``A`` the base active set."""
    spec = base.y.spec
    if hdir.spec != spec:
        raise ShapeError("direction lives on a different grid")
    return GridFunction(spec, _solver(spec.n).solve(base.active, hdir.values))


def apply_subderivative_adjoint(base: StateSolution, w: GridFunction) -> GridFunction:
    """``G(u)^* w``.

    The shifted Laplacian is symmetric and the inner product weights are
    uniform, so this is the same solve as ``apply_subderivative``.
    """
    return apply_subderivative(base, w)

"""Self-contained invariant suites run by ``sdbli check``.

Each suite returns ``(passed, worst_error, tolerance)``; the worst error is the
largest normalized discrepancy observed.
"""

from __future__ import annotations

import numpy as np

from .data_driven import build_data_driven, generate_training
from .forward import (
    _dense_laplacian,
    apply_subderivative,
    apply_subderivative_adjoint,
    fixed_point_oracle,
    solve_forward,
)
from .grid import GridFunction, GridSpec, apply_laplacian, inner, norm
from .system import apply_G_i, apply_G_i_adjoint, make_partition

SIZES = (3, 8)


def _rand(spec, rng, scale=1.0):
    return GridFunction(spec, scale * rng.standard_normal(spec.size))


def laplacian_suite(rng, **_):
    worst = 0.0
    for n in SIZES:
        spec = GridSpec(n)
        dense = _dense_laplacian(n)
        for _ in range(5):
            a = _rand(spec, rng)
            ref = dense @ a.values
            worst = max(worst, np.max(np.abs(apply_laplacian(a).values - ref)) / np.max(np.abs(ref)))
        worst = max(worst, np.max(np.abs(dense - dense.T)))
    return worst <= 1e-13, worst, 1e-13


def forward_suite(rng, **_):
    worst = 0.0
    for n in SIZES:
        spec = GridSpec(n)
        for _ in range(10):
            u = _rand(spec, rng, 50.0)
            y = solve_forward(u).y
            worst = max(worst, norm(y - fixed_point_oracle(u)) / max(1.0, norm(u)))
    return worst <= 1e-8, worst, 1e-8


def adjoint_suite(rng, break_adjoint=False, **_):
    sign = -1.0 if break_adjoint else 1.0
    worst = 0.0
    for n in SIZES:
        spec = GridSpec(n)
        part = make_partition(spec, min(2, n), "stripes")
        for _ in range(10):
            base = solve_forward(_rand(spec, rng, 50.0))
            h, w = _rand(spec, rng), _rand(spec, rng)
            scale = norm(h) * norm(w)
            lhs = inner(apply_subderivative(base, h), w)
            rhs = sign * inner(h, apply_subderivative_adjoint(base, w))
            worst = max(worst, abs(lhs - rhs) / scale)
            for i in range(part.P):
                wi = GridFunction(spec, part.restrict(i, w.values))
                lhs = inner(apply_G_i(i, base, h, part), wi)
                rhs = sign * inner(h, apply_G_i_adjoint(i, base, wi, part))
                worst = max(worst, abs(lhs - rhs) / (norm(h) * max(norm(wi), 1e-300)))
        ts = generate_training(part, 4, seed=int(rng.integers(2**31)))
        for i in range(part.P):
            op = build_data_driven(ts, i, part)
            for _ in range(5):
                u = _rand(spec, rng)
                w = GridFunction(spec, part.restrict(i, rng.standard_normal(spec.size)))
                lhs = inner(op.apply(u), w)
                rhs = sign * inner(u, op.adjoint(w))
                worst = max(worst, abs(lhs - rhs) / (norm(u) * norm(w)))
    return worst <= 1e-10, worst, 1e-10


def pseudoinverse_suite(rng, **_):
    spec = GridSpec(4)
    part = make_partition(spec, 2, "stripes")
    worst = 0.0
    for N in (1, 2, 3):
        ts = generate_training(part, N, seed=int(rng.integers(2**31)))
        V = np.column_stack([u.values for u in ts.inputs])
        for i in range(part.P):
            op = build_data_driven(ts, i, part)
            Y = np.column_stack([y.values[part.masks[i]] for y in ts.outputs[i]])
            # minimum-norm solution of M V = Y through the Gram matrix of V
            ref = Y @ np.linalg.solve(V.T @ V, V.T)
            worst = max(worst, np.max(np.abs(op.matrix - ref)))
    return worst <= 1e-10, worst, 1e-10


def derivative_suite(rng, **_):
    spec = GridSpec(8)
    worst = 0.0
    ok = True
    for _ in range(5):
        u = _rand(spec, rng, 50.0)
        base = solve_forward(u)
        h = _rand(spec, rng, 50.0)
        gh = apply_subderivative(base, h)
        errs = []
        for t in (1e-2, 1e-3, 1e-4):
            fd = (solve_forward(u + t * h).y - base.y) * (1.0 / t)
            errs.append(norm(fd - gh) / norm(gh))
        floor = 1e-9
        ok &= all(b <= max(a, floor) for a, b in zip(errs, errs[1:]))
        worst = max(worst, errs[-1])
    return bool(ok and worst <= 1e-6), worst, 1e-6


SUITES = {
    "laplacian": laplacian_suite,
    "forward_oracle": forward_suite,
    "adjoint": adjoint_suite,
    "pseudoinverse": pseudoinverse_suite,
    "directional_derivative": derivative_suite,
}


def run_checks(seed: int = 0, break_adjoint: bool = False) -> dict:
    results = {}
    for name, suite in SUITES.items():
        rng = np.random.default_rng([seed, len(name)])
        passed, worst, tol = suite(rng, break_adjoint=break_adjoint)
        results[name] = {"passed": bool(passed), "max_error": float(worst), "tolerance": tol}
    return {"passed": all(r["passed"] for r in results.values()), "suites": results}

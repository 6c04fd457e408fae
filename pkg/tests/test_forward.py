import numpy as np
import pytest

from sdbli.forward import (
    NewtonConfig,
    NewtonConvergenceError,
    apply_subderivative,
    apply_subderivative_adjoint,
    fixed_point_oracle,
    solve_forward,
    state_residual,
)
from sdbli.grid import GridFunction, GridSpec, inner, norm

from conftest import dense_neg_laplacian, rand_gf


def certified(st, u, tol=1e-12):
    assert st.residual_norm <= tol * max(1.0, norm(u))
    assert state_residual(st.y.values, u.values, u.spec) <= tol * max(1.0, norm(u))
    np.testing.assert_array_equal(st.active, st.y.values > 0)


def test_zero_source():
    s = GridSpec(5)
    st = solve_forward(GridFunction.zeros(s))
    assert not np.any(st.y.values)
    assert not st.active.any()


def test_nonpositive_source_is_linear_poisson():
    s = GridSpec(8)
    u = GridFunction.constant(s, -1.0)
    st = solve_forward(u)
    certified(st, u)
    y_ref = np.linalg.solve(dense_neg_laplacian(8), u.values)
    assert norm(st.y - GridFunction(s, y_ref)) <= 1e-12
    assert np.all(st.y.values <= 0)
    assert norm(fixed_point_oracle(u) - GridFunction(s, y_ref)) <= 1e-10


def test_constant_one_matches_oracle():
    u = GridFunction.constant(GridSpec(3), 1.0)
    st = solve_forward(u)
    certified(st, u)
    assert norm(st.y - fixed_point_oracle(u)) <= 1e-8
    assert st.active.all()


def test_oracle_residual_self_check(spec, rng):
    for _ in range(5):
        u = rand_gf(spec, rng, 50.0)
        y = fixed_point_oracle(u).values
        r = dense_neg_laplacian(spec.n) @ y + np.maximum(y, 0) - u.values
        assert spec.h * np.linalg.norm(r) <= 1e-8


def test_oracle_equivalence_many(spec, rng):
    for _ in range(25):
        u = rand_gf(spec, rng, 50.0)
        st = solve_forward(u)
        certified(st, u)
        assert norm(st.y - fixed_point_oracle(u)) <= 1e-8 * max(1.0, norm(u))


def test_comparison_principle(rng):
    s = GridSpec(8)
    for _ in range(20):
        u2 = rand_gf(s, rng, 50.0)
        u1 = GridFunction(s, u2.values + np.abs(rng.standard_normal(s.size)) * 20)
        assert np.all(solve_forward(u1).y.values >= solve_forward(u2).y.values - 1e-12)


def test_newton_terminates_quickly_up_to_64(rng):
    for n in (16, 32, 64):
        u = rand_gf(GridSpec(n), rng, 100.0)
        st = solve_forward(u)
        certified(st, u)
        assert st.newton_iters <= 30


def test_iteration_limit_error():
    u = GridFunction.constant(GridSpec(4), 100.0)
    with pytest.raises(NewtonConvergenceError) as info:
        solve_forward(u, NewtonConfig(max_newton_iters=1))
    assert info.value.residual > 0


def test_newton_config_validation():
    with pytest.raises(ValueError):
        NewtonConfig(newton_tol=0)
    with pytest.raises(ValueError):
        NewtonConfig(max_newton_iters=0)


def test_subderivative_linear_and_zero(rng):
    s = GridSpec(8)
    base = solve_forward(rand_gf(s, rng, 50.0))
    assert norm(apply_subderivative(base, GridFunction.zeros(s))) == 0
    assert norm(apply_subderivative_adjoint(base, GridFunction.zeros(s))) == 0
    a, b = rand_gf(s, rng), rand_gf(s, rng)
    lhs = apply_subderivative(base, 2.0 * a + b)
    rhs = 2.0 * apply_subderivative(base, a) + apply_subderivative(base, b)
    assert norm(lhs - rhs) <= 1e-12 * norm(lhs)


def test_subderivative_inactive_is_inverse_laplacian(rng):
    s = GridSpec(8)
    base = solve_forward(GridFunction.constant(s, -1.0))
    assert not base.active.any()
    h = rand_gf(s, rng)
    ref = np.linalg.solve(dense_neg_laplacian(8), h.values)
    assert norm(apply_subderivative(base, h) - GridFunction(s, ref)) <= 1e-12 * norm(h)


def test_subderivative_dense_oracle(rng):
    s = GridSpec(8)
    base = solve_forward(rand_gf(s, rng, 50.0))
    A = dense_neg_laplacian(8) + np.diag(base.active.astype(float))
    h = rand_gf(s, rng)
    ref = np.linalg.solve(A, h.values)
    assert norm(apply_subderivative(base, h) - GridFunction(s, ref)) <= 1e-12 * norm(h)


def test_adjoint_identity(rng):
    s = GridSpec(8)
    for _ in range(100):
        base = solve_forward(rand_gf(s, rng, 50.0))
        h, w = rand_gf(s, rng), rand_gf(s, rng)
        gap = inner(apply_subderivative(base, h), w) - inner(h, apply_subderivative_adjoint(base, w))
        assert abs(gap) <= 1e-10 * norm(h) * norm(w)


def test_adjoint_bitwise_equal_to_forward(rng):
    s = GridSpec(8)
    base = solve_forward(rand_gf(s, rng, 50.0))
    h = rand_gf(s, rng)
    assert apply_subderivative(base, h) == apply_subderivative_adjoint(base, h)


def test_directional_derivative_finite_differences(rng):
    s = GridSpec(8)
    for _ in range(10):
        u = rand_gf(s, rng, 50.0)
        base = solve_forward(u)
        assert np.all(base.y.values != 0)
        h = rand_gf(s, rng, 50.0)
        gh = apply_subderivative(base, h)
        errs = [norm((solve_forward(u + t * h).y - base.y) * (1 / t) - gh) / norm(gh)
                for t in (1e-2, 1e-3, 1e-4)]
        assert errs[-1] <= 1e-6
        assert all(b <= max(a, 1e-9) for a, b in zip(errs, errs[1:]))


def test_large_grid_uses_cg(rng):
    u = rand_gf(GridSpec(70), rng, 100.0)
    st = solve_forward(u)
    # CG inner solves: certificate at the CG tolerance level
    assert st.residual_norm <= 1e-10 * max(1.0, norm(u))

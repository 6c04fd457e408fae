import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sdbli.data_driven import build_all, generate_training
from sdbli.forward import NewtonConfig
from sdbli.grid import GridFunction, GridSpec, norm
from sdbli.solver import (
    TRACE_COLUMNS,
    ContractError,
    RuleInapplicable,
    SolverConfig,
    SolverFailure,
    a_priori_stop,
    admissible_c_lambda,
    check_admissibility,
    effective_lambda_max,
    lambda_schedule,
    run_sdbli,
    sample_index,
    sdbli_step,
    step_size,
    validate_trace,
    write_trace,
)
from sdbli.system import (
    EstimatedConstants,
    InverseProblem,
    add_noise,
    make_exact_data,
    make_partition,
    synthesize_truth,
)

from conftest import dense_neg_laplacian

nonneg = st.floats(min_value=0, max_value=1e6, allow_nan=False)


def make_problem(n=6, P=3, norm_true=3.0, deltas=None, seed=1, ops=True):
    spec = GridSpec(n)
    part = make_partition(spec, P)
    u_true = synthesize_truth(spec, seed=seed, target_norm=norm_true)
    exact = make_exact_data(u_true, part)
    noisy = add_noise(exact, part, np.zeros(P) if deltas is None else deltas, seed=2)
    operators = build_all(generate_training(part, 5, seed=3, target_norm=norm_true), part) if ops else None
    return InverseProblem(part, noisy.y_delta_parts, noisy.deltas, operators=operators, u_true=u_true)


# -- scalar rules -------------------------------------------------------------

def test_sample_index():
    rng = np.random.default_rng(0)
    assert {sample_index(rng, 1) for _ in range(50)} == {0}
    draws = np.array([sample_index(rng, 4) for _ in range(100_000)])
    counts = np.bincount(draws, minlength=4)
    sd = math.sqrt(100_000 * 0.25 * 0.75)
    assert np.all(np.abs(counts - 25_000) <= 3 * sd)
    r1, r2 = np.random.default_rng(7), np.random.default_rng(7)
    assert [sample_index(r1, 5) for _ in range(100)] == [sample_index(r2, 5) for _ in range(100)]
    with pytest.raises(ValueError):
        sample_index(r1, 0)


def test_step_size_examples():
    cfg = SolverConfig(omega_bar=3.0, omega_min=3.0, omega_max=3.0, tau=1.0)
    assert step_size(2.0, 1.0, cfg) == 3.0
    assert step_size(0.5, 1.0, cfg) == 0.0
    assert step_size(0.0, 0.0, cfg) == 0.0
    assert step_size(1.0, 1.0, cfg) == 0.0


@given(nonneg, nonneg, st.floats(min_value=1, max_value=100))
def test_step_size_gate(r, d, tau):
    cfg = SolverConfig(tau=tau)
    om = step_size(r, d, cfg)
    assert (om == 0.0) == (r <= tau * d)
    assert om in (0.0, cfg.omega_bar)


def test_lambda_schedule_examples():
    fast = SolverConfig(c_lambda=0.1, lambda_max=1.0)
    assert lambda_schedule(2.0, 0, fast) == pytest.approx(0.4)
    assert lambda_schedule([5.0, 2.0], 1, fast) == pytest.approx(0.4)
    assert lambda_schedule(2.0, 0, replace(fast, c_lambda=0.0)) == 0.0
    assert lambda_schedule(10.0, 0, fast) == 1.0
    strict = replace(fast, lambda_mode="strict")
    assert lambda_schedule([2.0, 0.1], 0, strict) == pytest.approx(0.1 * 0.01)
    with pytest.raises(ContractError):
        lambda_schedule(2.0, 0, strict)
    with pytest.raises(ContractError):
        lambda_schedule([2.0, 0.1], 0, strict, P=3)


@given(st.lists(st.floats(min_value=0, max_value=1e3), min_size=1, max_size=6),
       st.floats(min_value=0, max_value=10), st.floats(min_value=0, max_value=10),
       st.sampled_from(["fast", "strict"]), st.data())
def test_lambda_schedule_caps(res, c, cap, mode, data):
    i = data.draw(st.integers(0, len(res) - 1))
    cfg = SolverConfig(c_lambda=c, lambda_max=cap, lambda_mode=mode)
    lam = lambda_schedule(res, i, cfg, P=len(res))
    base = min(res) if mode == "strict" else res[i]
    assert 0 <= lam <= cap
    assert lam <= c * base * base
    if mode == "strict":
        assert all(lam <= c * r * r for r in res)


def test_effective_lambda_max():
    consts = EstimatedConstants(0.1, 2.0, 0.1, 5.0, 0.0)
    cfg = SolverConfig(sigma=1.0)
    assert effective_lambda_max(cfg, consts) == pytest.approx(0.1)
    assert effective_lambda_max(replace(cfg, lambda_max=0.05), consts) == 0.05
    assert effective_lambda_max(cfg, None) == math.inf


def test_a_priori_stop_examples():
    cfg = SolverConfig(K0=1.0, theta=1.0)
    assert a_priori_stop(0.1, cfg) == 10
    assert a_priori_stop(0.01, cfg) == 100
    assert 0.01**2 * 100 < 0.1**2 * 10
    k = a_priori_stop(1e-3, replace(cfg, theta=1.9))
    assert k == math.ceil(10**5.7)
    with pytest.raises(RuleInapplicable):
        a_priori_stop(0.0, cfg)


@given(st.floats(min_value=1e-6, max_value=1.0), st.floats(min_value=0.1, max_value=1.9),
       st.floats(min_value=0.1, max_value=100))
def test_a_priori_stop_limits(delta, theta, K0):
    cfg = SolverConfig(theta=theta, K0=K0)
    k1, k2 = a_priori_stop(delta, cfg), a_priori_stop(delta / 10, cfg)
    assert k2 >= k1 >= K0 * delta ** (-theta)
    # delta^2 k(delta) shrinks by roughly 10^(theta - 2) per decade
    assert (delta / 10) ** 2 * k2 <= delta**2 * k1 + (delta / 10) ** 2


def test_solver_config_validation_and_round_trip():
    for bad in (dict(omega_min=0.0), dict(tau=0.5), dict(c_lambda=-1), dict(lambda_mode="x"),
                dict(theta=2.0), dict(K0=0.0), dict(sigma=0.0), dict(max_iters=-1)):
        with pytest.raises(ValueError):
            SolverConfig(**bad)
    cfg = SolverConfig(sigma=2.0, c_lambda=0.3)
    assert SolverConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.to_dict()["lambda_max"] == "inf"


# -- admissibility ------------------------------------------------------------

def test_admissibility_passes_in_linear_like_regime():
    consts = EstimatedConstants(L_F=0.05, L_M=0.05, mu_hat=0.05, C_M_delta=0.1, C_N_hat=0.0)
    cfg = SolverConfig(omega_bar=100, omega_min=100, omega_max=100, tau=1e9, c_lambda=0.0, sigma=1.0)
    rep = check_admissibility(consts, cfg)
    assert rep.passes and rep.slack_noisy > 0 and rep.slack_exact > 0
    assert rep.C_tilde_F == pytest.approx(2 * 100 * (1 - 0.0025 * 100 - 0.05))
    d = rep.to_dict()
    for key in ("L_F", "L_M", "mu_hat", "C_M_delta", "c_lambda", "sigma", "omega_min", "omega_max", "tau"):
        assert key in d


def test_admissibility_fails_for_large_omega():
    consts = EstimatedConstants(L_F=0.1, L_M=0.0, mu_hat=0.2, C_M_delta=0.0, C_N_hat=0.0)
    W = (1 - 0.2) / 0.1**2
    cfg = SolverConfig(omega_bar=W, omega_min=W, omega_max=W, tau=1e9, sigma=1.0)
    rep = check_admissibility(consts, cfg)
    assert rep.descent <= 1e-9 and not rep.passes_exact
    with pytest.raises(ContractError):
        check_admissibility(consts, SolverConfig())


def test_admissible_c_lambda_keeps_exact_inequality():
    consts = EstimatedConstants(L_F=0.05, L_M=0.1, mu_hat=0.05, C_M_delta=0.2, C_N_hat=0.0)
    cfg = SolverConfig(sigma=1.0)
    c = admissible_c_lambda(consts, cfg, 0.9)
    assert c > 0
    assert check_admissibility(consts, replace(cfg, c_lambda=c)).passes_exact
    c_max = admissible_c_lambda(consts, cfg, 1.0)
    assert not check_admissibility(consts, replace(cfg, c_lambda=c_max * 1.01)).passes_exact


# -- single steps -------------------------------------------------------------

def test_step_fixed_point_at_truth():
    prob = make_problem()
    cfg = SolverConfig(c_lambda=1.0)
    u_next, rec = sdbli_step(prob.u_true, 1, prob, cfg)
    assert rec["residual"] == 0.0 and rec["omega_k"] == 0.0 and rec["lambda_k"] == 0.0
    assert u_next == prob.u_true


def test_step_classical_landweber_dense_oracle():
    n = 4
    spec = GridSpec(n)
    part = make_partition(spec, 1)
    u_true = GridFunction.constant(spec, -2.0)
    exact = make_exact_data(u_true, part)
    prob = InverseProblem(part, exact.y_parts, np.zeros(1), u_true=u_true)
    u = GridFunction(spec, -1.0 - np.linspace(0, 1, spec.size))
    cfg = SolverConfig(omega_bar=7.0, omega_min=7.0, omega_max=7.0, c_lambda=0.0)
    u_next, rec = sdbli_step(u, 0, prob, cfg)
    K = dense_neg_laplacian(n)
    y_delta = np.linalg.solve(K, u_true.values)
    ref = u.values - 7.0 * np.linalg.solve(K, np.linalg.solve(K, u.values) - y_delta)
    np.testing.assert_allclose(u_next.values, ref, rtol=0, atol=1e-10)
    assert rec["omega_k"] == 7.0 and rec["lambda_k"] == 0.0


def test_step_gate_closed_leaves_only_data_term():
    prob = make_problem(deltas=[10.0, 10.0, 10.0])
    u = GridFunction.zeros(prob.spec)
    cfg = SolverConfig(tau=1.0, c_lambda=0.5)
    u_next, rec = sdbli_step(u, 2, prob, cfg)
    assert rec["omega_k"] == 0.0 and rec["lambda_k"] > 0
    op = prob.operators[2]
    mres = op.apply(u) - prob.y_delta[2]
    ref = u - rec["lambda_k"] * op.adjoint(mres)
    assert norm(u_next - ref) <= 1e-14 * max(1.0, norm(ref))


def test_step_needs_operators_for_lambda():
    prob = make_problem(ops=False)
    with pytest.raises(ContractError):
        sdbli_step(GridFunction.zeros(prob.spec), 0, prob, SolverConfig(c_lambda=1.0))


# -- runs ---------------------------------------------------------------------

def test_run_from_truth_freezes_at_first_check():
    prob = make_problem()
    cfg = SolverConfig(max_iters=100)
    tr = run_sdbli(prob.u_true, prob, cfg)
    assert tr.stop_reason == "frozen"
    assert tr.k_stop == 2 * prob.P
    assert all(e == 0.0 for e in tr.err_to_truth)
    assert set(tr.omega_k) == {0.0}
    assert tr.u_final == prob.u_true


def test_run_a_priori_stop_exact_count():
    prob = make_problem(deltas=[0.01, 0.01, 0.01])
    cfg = SolverConfig(K0=0.5, tau=2.0, max_iters=10_000)
    tr = run_sdbli(GridFunction.zeros(prob.spec), prob, cfg)
    k = a_priori_stop(prob.delta_total, cfg)
    assert tr.stop_reason == "a_priori" and tr.k_stop == k
    assert not validate_trace(tr, cfg)


def test_run_budget_and_determinism(tmp_path):
    prob = make_problem()
    cfg = SolverConfig(max_iters=60, c_lambda=0.01, sigma=10.0, seed=4)
    a = run_sdbli(GridFunction.zeros(prob.spec), prob, cfg)
    b = run_sdbli(GridFunction.zeros(prob.spec), prob, cfg)
    assert a.stop_reason == "budget" and a.k_stop == 60
    assert a.to_csv() == b.to_csv()
    c = run_sdbli(GridFunction.zeros(prob.spec), prob, replace(cfg, seed=5))
    assert c.i_k != a.i_k
    assert not validate_trace(a, cfg)
    assert a.final_err < a.err_to_truth[0]
    csv_path, json_path = write_trace(a, tmp_path / "t", cfg)
    lines = open(csv_path).read().splitlines()
    assert lines[0] == ",".join(TRACE_COLUMNS) and len(lines) == 61


def test_run_ball_exit_flag():
    prob = make_problem()
    cfg = SolverConfig(max_iters=5, sigma=1e-6)
    tr = run_sdbli(GridFunction.zeros(prob.spec), prob, cfg)
    assert all(tr.ball_exit)


def test_run_strict_mode_contracts():
    prob = make_problem()
    cfg = SolverConfig(max_iters=40, c_lambda=0.05, lambda_mode="strict", sigma=10.0)
    tr = run_sdbli(GridFunction.zeros(prob.spec), prob, cfg)
    assert not validate_trace(tr, cfg)
    for lam, rmin in zip(tr.lambda_k, tr.residual_min):
        assert lam <= cfg.c_lambda * rmin**2 + 1e-15


def test_run_zero_budget():
    prob = make_problem()
    tr = run_sdbli(GridFunction.zeros(prob.spec), prob, SolverConfig(max_iters=0))
    assert tr.k_stop == 0 and tr.u_final == GridFunction.zeros(prob.spec)


def test_validate_trace_detects_tampering():
    prob = make_problem()
    cfg = SolverConfig(max_iters=10, c_lambda=0.01, sigma=10.0)
    tr = run_sdbli(GridFunction.zeros(prob.spec), prob, cfg)
    tr.omega_k[3] = 0.0
    tr.lambda_k[5] = 1e9
    msgs = validate_trace(tr, cfg)
    assert any("k=3" in m for m in msgs) and any("k=5" in m for m in msgs)


def test_solver_failure_carries_iteration():
    prob = make_problem(norm_true=10.0)
    prob = replace(prob, newton=NewtonConfig(max_newton_iters=1))
    with pytest.raises(SolverFailure) as info:
        run_sdbli(GridFunction.constant(prob.spec, 100.0), prob, SolverConfig(max_iters=5))
    assert info.value.k == 0

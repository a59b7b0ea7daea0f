import dataclasses

import numpy as np
import pytest

from conftest import SMALL_W, gen_problem, rel
from rkhs_cp.errors import BreakdownError, ValidationError
from rkhs_cp.kernel import KernelMatrix, KernelSpec
from rkhs_cp.observations import FactorSet, build_observation_set
from rkhs_cp.operators import build_dense_hessian, build_rhs, make_problem, mvp_onfly
from rkhs_cp.problemgen import hand_instance
from rkhs_cp.solvers import (
    SOLVERS,
    SolveConfig,
    condition_bound_check,
    pcg_inverse_free,
    pcg_standard,
    run_solver,
    solve_dense,
)
from rkhs_cp.tensor_index import Shape

ITERATIVE = ("jacobi-onfly", "block-preagg", "inverse-free")


def _empty(n=3, r=2, lam=1.0, K=None):
    shape = Shape((n, 2, 2), 0)
    f = FactorSet((np.ones((2, r)), np.ones((2, r))))
    Kv = np.eye(n) if K is None else K
    return make_problem(build_observation_set(shape, f, []), f, KernelMatrix(Kv, np.zeros(n)), lam)


def criterion_instances():
    """Twenty seeded desk instances, lambda alternating between 0.05 and 0.5."""
    for seed in range(20):
        lam = 0.05 if seed % 2 == 0 else 0.5
        yield seed, gen_problem(dims=(8, 6, 5), rank=3, q=60, lam=lam, seed=seed)[0]


# ---------------------------------------------------------------- examples


@pytest.mark.parametrize("name", list(SOLVERS))
def test_hand_instance_every_path(name):
    rep = run_solver(hand_instance(), name)
    assert abs(rep.W[0, 0] - 3 / 19) <= 1e-15
    assert rep.iterations == 1
    assert rep.converged


@pytest.mark.parametrize("name", list(SOLVERS))
def test_small_frozen_instance_every_path(small_problem, name):
    rep = run_solver(small_problem, name, SolveConfig(tol=1e-14))
    assert rep.converged
    assert rel(rep.W, SMALL_W) < 1e-12


def test_dense_zero_data():
    rep = solve_dense(_empty())
    np.testing.assert_array_equal(rep.W, 0)
    assert rep.iterations == 1


def test_dense_identity_system_returns_rhs():
    p = _empty(n=3, r=2, lam=1.0)
    B = np.arange(6.0).reshape(3, 2) - 2.5
    p = dataclasses.replace(p, B=B)
    np.testing.assert_allclose(solve_dense(p).W, B, rtol=1e-15)
    np.testing.assert_array_equal(build_rhs(p), B)


@pytest.mark.parametrize("name", ITERATIVE)
def test_zero_rhs_zero_iterations(name):
    rep = run_solver(_empty(), name)
    assert rep.iterations == 0
    assert rep.converged
    np.testing.assert_array_equal(rep.W, 0)


def test_standard_configs_match_dense_at_tight_tol(desk_problem):
    # the forward error is about tol * cond(H); 1e-8 agreement needs a tighter tol than the default
    Wd = solve_dense(desk_problem).W
    cfg = SolveConfig(tol=1e-13)
    for name in ("jacobi-onfly", "block-preagg"):
        rep = run_solver(desk_problem, name, cfg)
        assert rep.converged
        assert rel(rep.W, Wd) <= 1e-8


def test_inverse_free_matches_dense(desk_problem):
    rep = pcg_inverse_free(desk_problem)
    assert rep.converged
    assert rel(rep.W, solve_dense(desk_problem).W) <= 1e-6


@pytest.mark.parametrize("name", list(SOLVERS))
def test_zero_lambda_rejected(name):
    p, _ = gen_problem(lam=0.0)
    with pytest.raises(ValidationError, match="lambda > 0"):
        run_solver(p, name)


def test_unknown_solver_lists_names(desk_problem):
    with pytest.raises(ValidationError, match="jacobi-onfly"):
        run_solver(desk_problem, "jacoby-onfly")


def test_breakdown_reports_iteration(desk_problem):
    with pytest.raises(BreakdownError) as exc:
        pcg_standard(desk_problem, mvp=lambda V: 0.0 * V, precond="identity")
    assert exc.value.iteration == 0


def test_iteration_cap_is_reported_not_raised(desk_problem):
    rep = run_solver(desk_problem, "jacobi-onfly", SolveConfig(max_iters=3))
    assert rep.iterations == 3
    assert not rep.converged
    assert len(rep.residual_history) == 4


def test_config_validation():
    for kw in ({"tol": 0}, {"tol": 1.0}, {"max_iters": 0}, {"refresh_interval": 0}, {"breakdown_eps": 0}):
        with pytest.raises(ValidationError):
            SolveConfig(**kw)
    assert SolveConfig().iteration_limit(hand_instance()) == 10


def test_expert_pairings_converge(desk_problem):
    Wd = solve_dense(desk_problem).W
    for mvp, pre in (("onfly", "block"), ("preaggregated", "jacobi"), ("dense", "identity")):
        rep = run_solver(desk_problem, "jacobi-onfly", SolveConfig(tol=1e-12), mvp=mvp, precond=pre)
        assert rep.converged
        assert rel(rep.W, Wd) <= 1e-6


def test_inverse_free_reported_residual_is_true_residual(desk_problem):
    p = desk_problem
    C = build_rhs(p)
    for k in (5, 17, 40):
        rep = pcg_inverse_free(p, SolveConfig(max_iters=k, refresh_interval=50))
        true = np.linalg.norm(C - mvp_onfly(p, rep.W)) / np.linalg.norm(C)
        assert abs(true - rep.final_residual) <= 1e-9 * max(1.0, true)


# ---------------------------------------------------------------- invariants


@pytest.mark.parametrize("name", ITERATIVE)
def test_oracle_agreement_criterion_instances(name):
    for seed, p in criterion_instances():
        rep = run_solver(p, name, SolveConfig(tol=1e-10, max_iters=240))
        assert rep.converged, seed
        assert rep.residual_history[-1] <= 1e-10
        assert rel(rep.W, solve_dense(p).W) <= 1e-6, seed


def _max_iterations(name):
    return max(run_solver(p, name, SolveConfig(tol=1e-10, max_iters=240)).iterations for _, p in criterion_instances())


def test_termination_proxy_inverse_free():
    assert _max_iterations("inverse-free") <= 8 * 3 + 5


@pytest.mark.xfail(
    strict=True,
    reason="loss of orthogonality in binary64: standard PCG needs roughly 3nr iterations to reach 1e-10 "
    "on these kappa ~ 1e7 systems although exact arithmetic terminates at nr",
)
@pytest.mark.parametrize("name", ["jacobi-onfly", "block-preagg"])
def test_termination_proxy_standard(name):
    assert _max_iterations(name) <= 8 * 3 + 5


@pytest.mark.parametrize("name", ["jacobi-onfly", "block-preagg"])
def test_energy_error_monotone(name):
    for seed, p in list(criterion_instances())[:6]:
        H = build_dense_hessian(p)
        Wd = solve_dense(p).W
        iterates = [np.zeros_like(Wd)]
        rep = pcg_standard(
            p, *SOLVERS[name], cfg=SolveConfig(tol=1e-10, max_iters=240), callback=lambda k, W: iterates.append(W.copy())
        )
        assert rep.converged
        energy = []
        for W in iterates:
            e = (W - Wd).reshape(-1, order="F")
            energy.append(np.sqrt(max(e @ H @ e, 0.0)))
        for a, b in zip(energy, energy[1:]):
            assert b <= a + 1e-12 * energy[0], (seed, a, b)


def test_tracking_fidelity_normal_runs():
    for seed, p in criterion_instances():
        rep = pcg_inverse_free(p, SolveConfig(refresh_interval=5))
        assert rep.refresh_log
        for k, drift_v, drift_z, after in rep.refresh_log:
            assert drift_v <= 1e-8 and drift_z <= 1e-8, (seed, k)
            assert after == 0.0


def test_refresh_does_not_reset_iterations(desk_problem):
    rep = pcg_inverse_free(desk_problem, SolveConfig(fixed_iters=23, refresh_interval=5))
    assert rep.iterations == 23
    assert [entry[0] for entry in rep.refresh_log] == [5, 10, 15, 20]


def test_block_preconditioner_beats_identity():
    for seed in range(3):
        p, _ = gen_problem(dims=(32, 10, 10), rank=3, q=500, lam=1e-3, seed=seed)
        cfg = SolveConfig(tol=1e-10)
        blk = run_solver(p, "block-preagg", cfg)
        ident = pcg_standard(p, "preaggregated", "identity", cfg)
        assert blk.converged and ident.converged
        assert blk.iterations <= ident.iterations


def test_per_iteration_flops_match_formulas():
    p, _ = gen_problem(dims=(9, 6, 5), rank=3, q=70)
    n, r, q = 9, 3, 70
    k = 7
    cfg = SolveConfig(fixed_iters=k, refresh_interval=100)
    onfly = run_solver(p, "jacobi-onfly", cfg)
    assert onfly.iterations == k
    assert onfly.iter_flops == k * (2 * n * n * r + 2 * q * r + 9 * n * r)
    assert onfly.setup_flops == 2 * q * r + 2 * n * n * r + n * n + 3 * n * r
    block = run_solver(p, "block-preagg", cfg)
    assert block.iter_flops == k * (2 * n * n * r + 2 * n * r * r + 9 * n * r)
    invf = run_solver(p, "inverse-free", cfg)
    assert invf.iter_flops == k * (n * n * r + 2 * q * r + 12 * n * r)
    assert invf.flops.get("refresh", 0) == 0


def test_refresh_flops_are_separate(desk_problem):
    rep = pcg_inverse_free(desk_problem, SolveConfig(fixed_iters=10, refresh_interval=5))
    n, r = desk_problem.n, desk_problem.r
    assert rep.flops["refresh"] == 2 * (2 * n * n * r + n * r)


def test_flop_counters_deterministic(desk_problem):
    cfg = SolveConfig(fixed_iters=5)
    for name in ITERATIVE:
        assert run_solver(desk_problem, name, cfg).flops == run_solver(desk_problem, name, cfg).flops


def test_report_invariants(desk_problem):
    for name in SOLVERS:
        rep = run_solver(desk_problem, name)
        assert rep.residual_history
        if rep.converged:
            assert rep.final_residual <= 1e-10
        assert set(rep.wall_time) == {"setup", "solve"}


# ---------------------------------------------------------------- condition bound


def test_condition_bound_empty_data():
    kappa, bound = condition_bound_check(_empty(n=3, r=2, lam=0.7, K=np.diag([1.0, 2.0, 3.0])))
    assert kappa == pytest.approx(1.0, abs=1e-12)
    assert bound == 1.0


def test_condition_bound_identity_kernel():
    p, _ = gen_problem(dims=(6, 5, 4), rank=2, q=30, lam=0.1, kernel=KernelSpec("identity"))
    kappa, bound = condition_bound_check(p)
    lmax = np.linalg.eigvalsh(build_dense_hessian(p) - 0.1 * np.eye(12))[-1]
    assert bound == pytest.approx(1 + lmax / 0.1, rel=1e-10)
    assert kappa <= bound * (1 + 1e-8)


def test_condition_bound_random():
    p, _ = gen_problem(dims=(6, 5, 4), rank=2, q=30, lam=0.1)
    kappa, bound = condition_bound_check(p)
    assert 1.0 <= kappa <= bound * (1 + 1e-8)


def test_oracle_agreement_wide_seed_range_at_tight_tol():
    # at tol 1e-10 a few percent of seeds exceed 1e-6 (forward error ~ tol * cond(H)); 1e-12 covers them
    cfg = SolveConfig(tol=1e-12, max_iters=240)
    for seed in range(20, 80):
        lam = 0.05 if seed % 2 == 0 else 0.5
        p, _ = gen_problem(dims=(8, 6, 5), rank=3, q=60, lam=lam, seed=seed)
        Wd = solve_dense(p).W
        for name in ITERATIVE:
            rep = run_solver(p, name, cfg)
            assert rep.converged
            assert rel(rep.W, Wd) <= 1e-6, (seed, name)

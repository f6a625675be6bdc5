from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmpc_lab.design import TerminalSpec, TubeSpec
from dmpc_lab.dmpc import (
    DmpcProblem,
    candidate,
    condense,
    cost,
    residuals,
    rollout,
    solve,
    terminal_lhs,
)
from dmpc_lab.dynamics import AgentModel
from dmpc_lab.errors import DimensionMismatch, Infeasible, StaleSolution, TubePreconditionViolated
from dmpc_lab.initialization import initial_plan

import grid_oracle


def scalar_problem(x_now=2.0, nbr=0.0, self_traj=None, eta=10.0, u_max=10.0, level=100.0, K=-0.5, N=2, P=1.0):
    model = AgentModel(1.0, 1.0, u_max)
    self_traj = np.full((N + 1, 1), x_now) if self_traj is None else np.asarray(self_traj, float).reshape(N + 1, 1)
    return DmpcProblem(
        model=model,
        K=[[K]],
        N=N,
        P=P,
        tube=TubeSpec(eta),
        terminal=TerminalSpec([[1.0]], level, 1),
        x_now=[x_now],
        assumed_self=self_traj,
        assumed_neighbors={1: np.full((N + 1, 1), nbr)},
        weights={1: 1.0},
    )


def test_rollout_hand_recursion():
    x, u = rollout(scalar_problem(), np.zeros((2, 1)))
    np.testing.assert_allclose(u[:, 0], [-1.0, -0.5])
    np.testing.assert_allclose(x[:, 0], [2.0, 1.0, 0.5])


def test_rollout_zero_gain_passes_corrections_through():
    p = scalar_problem(K=0.0, N=3)
    c = np.array([[0.3], [-0.2], [0.7]])
    _, u = rollout(p, c)
    np.testing.assert_array_equal(u, c)


def test_rollout_zero_gap_zero_correction():
    A = np.array([[0.0, 1.0], [-1.15, 0.0]])
    x0 = np.array([0.2, -0.1])
    traj = np.tile(x0, (4, 1))
    p = DmpcProblem(AgentModel(A, [[0.5], [0.5]], 0.1), [[0.27, -0.31]], 3, 50.0, TubeSpec(1.0),
                    TerminalSpec(np.eye(2), 1.0, 4), x0, traj, {2: traj}, {2: 1.0})
    x, u = rollout(p, np.zeros((3, 1)))
    assert u[0, 0] == 0.0
    np.testing.assert_allclose(x[1], A @ x0)


def test_rollout_rejects_wrong_length():
    with pytest.raises(DimensionMismatch):
        rollout(scalar_problem(), np.zeros((3, 1)))


def test_cost_examples():
    assert cost(np.zeros((4, 1)), [[50.0]]) == 0.0
    assert cost([[0.1], [-0.1]], [[50.0]]) == pytest.approx(1.0, abs=1e-14)
    assert cost([[1.0, 0.0], [0.0, 0.0]], np.eye(2)) == 1.0


def test_consensus_point_is_optimal_with_zero_cost():
    p = scalar_problem(x_now=1.0, nbr=1.0, eta=0.5, u_max=0.3, level=1.0)
    sol = solve(p)
    assert sol.status == "optimal"
    assert sol.cost <= 1e-14
    np.testing.assert_allclose(sol.c_star, 0.0, atol=1e-8)
    assert sol.max_residual == 0.0


def test_box_only_instance_matches_grid():
    # unconstrained protocol would need u0 = -2, so the correction must lift it to the box
    inst = grid_oracle.TinyInstance(
        A=np.array([[1.0]]), B=np.array([[1.0]]), K=np.array([[-0.5]]), u_max=1.0, eta=1.0,
        S=np.array([[1.0]]), level=50.0, P=1.0, x_now=np.array([2.0]),
        xhat_self=np.array([[2.0], [1.0], [0.5]]), xhat_nbr=np.array([[-2.0], [-2.0], [-2.0]]),
    )
    ref, ref_cost, _ = grid_oracle.grid_solve(inst)
    sol = solve(grid_oracle.to_problem(inst))
    assert sol.status == "optimal"
    assert np.max(np.abs(sol.c_star[:, 0] - ref)) <= 2e-3
    assert sol.cost == pytest.approx(ref_cost, rel=1e-4)
    assert np.max(np.abs(sol.u_star)) == pytest.approx(1.0, abs=1e-9)


def test_solution_matches_rollout(ex1_config):
    cfg = ex1_config
    plan = initial_plan(cfg.init, cfg.model, cfg.K, cfg.x0, cfg.N, cfg.terminal.S, cfg.topology)
    i = 0
    nbrs = cfg.topology.neighbors[i]
    p = DmpcProblem(cfg.model, cfg.K, cfg.N, cfg.P[i], TubeSpec(cfg.eta), cfg.terminal, cfg.x0[i],
                    plan.trajectories[i], {j: plan.trajectories[j] for j in nbrs},
                    {j: float(cfg.topology.adjacency[i, j]) for j in nbrs})
    sol = solve(p, plan.corrections[i])
    x, u = rollout(p, sol.c_star)
    np.testing.assert_allclose(sol.x_star, x, atol=1e-10)
    np.testing.assert_allclose(sol.u_star, u, atol=1e-10)
    assert sol.status != "infeasible" and sol.max_residual <= 1e-6


def test_ex2_first_step_respects_input_bound(ex2_run):
    cfg, trace = ex2_run
    assert np.max(np.abs(trace.inputs[0])) <= 0.1 + 1e-9


def test_tube_precondition():
    p = scalar_problem(x_now=2.0, self_traj=[[3.5], [1.0], [0.5]], eta=1.0)
    with pytest.raises(TubePreconditionViolated):
        solve(p)


def test_infeasible_instance():
    # the terminal level is below what any admissible input can reach
    p = scalar_problem(x_now=5.0, nbr=0.0, eta=10.0, u_max=0.1, level=1e-3)
    sol = solve(p)
    assert sol.status == "infeasible"
    with pytest.raises(Infeasible):
        solve(p, strict=True)


def test_fallback_returns_warm_start_unchanged():
    # a starved solver cannot finish on instances with active curved constraints,
    # so a feasible warm start must come back untouched
    from dmpc_lab.dmpc import SolverSettings

    rng = np.random.default_rng(2024)
    starved = SolverSettings(max_outer=1, max_inner=1)
    hits = 0
    for _ in range(200):
        p = grid_oracle.to_problem(grid_oracle.random_instance(rng))
        full = solve(p)
        if full.status != "optimal" or full.outer_iterations < 3:
            continue
        warm = None
        for _ in range(50):
            trial = full.c_star + rng.normal(scale=0.05, size=full.c_star.shape)
            if max(residuals(p, trial).values()) == 0.0:
                warm = trial
                break
        if warm is None:
            continue
        sol = solve(p, warm, starved)
        assert sol.status in ("optimal", "feasible_fallback")
        if sol.status == "feasible_fallback":
            hits += 1
            np.testing.assert_array_equal(sol.c_star, warm)
            assert sol.cost == cost(warm, p.P)
    assert hits >= 2


def test_candidate_examples():
    c = np.array([[1.0], [2.0], [3.0]])
    np.testing.assert_array_equal(candidate(c, 5, 6, 2)[:, 0], [2.0, 3.0, 0.0])
    np.testing.assert_array_equal(candidate(c, 4, 6, 2)[:, 0], [3.0, 0.0, 0.0])
    np.testing.assert_array_equal(candidate(np.zeros((3, 1)), 4, 5, 2), 0.0)
    np.testing.assert_array_equal(candidate(c, 3, 6, 3)[:, 0], [0.0, 0.0, 0.0])


@pytest.mark.parametrize("prev, nxt", [(5, 5), (2, 6), (7, 6)])
def test_candidate_stale(prev, nxt):
    with pytest.raises(StaleSolution):
        candidate(np.ones((3, 1)), prev, nxt, 2)


def _random_tiny_problem(seed):
    rng = np.random.default_rng(seed)
    for _ in range(40):
        inst = grid_oracle.random_instance(rng)
        p = grid_oracle.to_problem(inst)
        sol = solve(p)
        if sol.status == "optimal":
            return p, sol, rng
    return None


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_optimal_plan_is_locally_minimal(seed):
    found = _random_tiny_problem(seed)
    if found is None:
        return
    p, sol, rng = found
    for _ in range(100):
        d = rng.normal(size=sol.c_star.shape)
        d *= 1e-3 / np.linalg.norm(d)
        trial = sol.c_star + d
        if max(residuals(p, trial).values()) > 0.0:
            continue
        assert cost(trial, p.P) >= sol.cost - 1e-6


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_terminal_constraint_is_convex_along_segments(seed):
    rng = np.random.default_rng(seed)
    p = grid_oracle.to_problem(grid_oracle.random_instance(rng))
    a, b = rng.normal(size=(2, 2, 1))

    def g(c):
        x, _ = rollout(p, c)
        return terminal_lhs(p, x[-1])

    ga, gb = g(a), g(b)
    for s in np.linspace(0, 1, 21):
        assert g((1 - s) * a + s * b) <= max(ga, gb) + 1e-9


def test_condensed_constraint_hessians_are_psd(ex1_config):
    cfg = ex1_config
    plan = initial_plan(cfg.init, cfg.model, cfg.K, cfg.x0, cfg.N, cfg.terminal.S, cfg.topology)
    nbrs = cfg.topology.neighbors[2]
    p = DmpcProblem(cfg.model, cfg.K, cfg.N, cfg.P[2], TubeSpec(cfg.eta), cfg.terminal, cfg.x0[2],
                    plan.trajectories[2], {j: plan.trajectories[j] for j in nbrs},
                    {j: float(cfg.topology.adjacency[2, j]) for j in nbrs})
    cp = condense(p)
    for Pk in cp.Pc:
        assert np.linalg.eigvalsh(Pk).min() >= -1e-10
    assert np.linalg.eigvalsh(cp.Q).min() > 0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_residuals_zero_iff_constraints_hold(seed):
    rng = np.random.default_rng(seed)
    p = grid_oracle.to_problem(grid_oracle.random_instance(rng))
    c = rng.normal(scale=0.3, size=(2, 1))
    res = residuals(p, c)
    x, u = rollout(p, c)
    assert (res["input"] == 0.0) == bool(np.all(np.abs(u) <= p.u_bound))
    assert (res["terminal"] == 0.0) == (terminal_lhs(p, x[2]) <= p.terminal.level)

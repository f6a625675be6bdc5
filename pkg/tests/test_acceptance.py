"""Acceptance gate: one test per criterion, each printing a pass/fail line.

Lines are collected in ``conftest.ACCEPTANCE_LINES`` and echoed in the
terminal summary. Every assertion uses the tolerance stated in the line.
"""

from __future__ import annotations

import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, cached_run
from dmpc_lab import scenario
from dmpc_lab.design import certify, check_consensus_gain, check_delay_horizon, worst_error_radii
from dmpc_lab.dmpc import solve
from dmpc_lab.engine import run, summarize
from dmpc_lab.tracefile import trace_to_csv

import grid_oracle
import oracles

SEEDS = range(5)


def record(k: int, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {k:>2}: {detail}"
    ACCEPTANCE_LINES[k] = line
    print(line)


def _reproduction(name: str, u_max: float):
    cfg = scenario.packaged(name)
    t0 = time.perf_counter()
    trace = run(cfg)
    elapsed = time.perf_counter() - t0
    T = cfg.T
    excess = float(np.max(np.abs(trace.inputs)) - u_max)
    ratio = float(trace.D[T] / trace.D[0])
    infeasible = int(np.sum(trace.status == "infeasible"))
    ok = excess <= 1e-9 and ratio <= 0.1 and infeasible == 0 and elapsed < 10.0
    detail = (
        f"{name}: max|u| - {u_max} = {excess:.3e} (<= 1e-9), D(T)/D(0) = {ratio:.3e} (<= 0.1), "
        f"infeasible steps = {infeasible}, runtime {elapsed:.2f} s (< 10 s)"
    )
    return ok, detail


def test_criterion_01_example1_reproduction():
    ok, detail = _reproduction("ex1", 0.3)
    record(1, ok, detail)
    assert ok, detail


def test_criterion_02_example2_reproduction():
    ok, detail = _reproduction("ex2", 0.1)
    A = scenario.packaged("ex2").model.A
    rho = oracles.spectral_radius(A)
    rho_ok = abs(rho - np.sqrt(1.15)) <= 1e-9
    ok = ok and rho_ok
    detail += f", rho(A) = {rho:.12f} vs sqrt(1.15) (+-1e-9)"
    record(2, ok, detail)
    assert ok, detail


def test_criterion_03_baseline_contrast():
    cfg2, tr2 = cached_run("ex2", controller="delayed_linear")
    cfg1, tr1 = cached_run("ex1", controller="delayed_linear")
    ratio = float(tr2.D[cfg2.T] / tr2.D[0])
    umax1 = float(np.max(np.abs(tr1.inputs)))
    ok = ratio > 0.5 and umax1 > 0.3
    detail = f"delayed_linear ex2 D(T)/D(0) = {ratio:.3f} (> 0.5), delayed_linear ex1 max|u| = {umax1:.3f} (> 0.3)"
    record(3, ok, detail)
    assert ok, detail


def test_criterion_04_consensus_gain_certificate():
    parts, ok = [], True
    for name in ("ex1", "ex2"):
        cfg = scenario.packaged(name)
        radii = check_consensus_gain(cfg.model, cfg.topology, cfg.K)
        ref = [oracles.spectral_radius(cfg.model.A + lam * cfg.model.B @ cfg.K) for lam, _ in radii]
        dev = max(abs(r - q) for (_, r), q in zip(radii, ref))
        zero = certify(cfg.model, cfg.topology, np.zeros_like(cfg.K), cfg.N, cfg.delay.tau_bar, cfg.eta)
        good = all(r < 1 for _, r in radii) and dev <= 1e-8 and not zero.gain_ok
        ok &= good
        parts.append(f"{name}: max radius {max(r for _, r in radii):.6f} (< 1), oracle dev {dev:.1e} (<= 1e-8), K=0 fails: {not zero.gain_ok}")
    detail = "; ".join(parts)
    record(4, ok, detail)
    assert ok, detail


def test_criterion_05_delay_and_error_set_certificate():
    parts, ok = [], True
    for name in ("ex1", "ex2"):
        cfg = scenario.packaged(name)
        worst, horizon_ok = check_delay_horizon(cfg.model, cfg.K, cfg.N, cfg.delay.tau_bar)
        radii = worst_error_radii(cfg.model, cfg.K, cfg.eta, cfg.N, cfg.delay.tau_bar)
        sets_ok = max(radii) <= cfg.eta + 1e-9
        tripled = certify(cfg.model, cfg.topology, 3 * cfg.K, cfg.N, cfg.delay.tau_bar, cfg.eta)
        breaks = not tripled.passed
        ok &= horizon_ok and sets_ok and breaks
        parts.append(
            f"{name}: max spectral radius {worst:.6f} (<= 1), max error-set radius {max(radii):.6f} "
            f"vs eta {cfg.eta} (<= eta + 1e-9), 3K breaks a check: {breaks}"
        )
    detail = "; ".join(parts)
    record(5, ok, detail)
    assert ok, detail


def test_criterion_06_solver_matches_grid_oracle():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    n, worst_dc, worst_rel, mismatches = 0, 0.0, 0.0, 0
    while n < 50:
        inst = grid_oracle.random_instance(rng)
        ref = grid_oracle.grid_solve(inst)
        if ref is None or ref[2] < 200:
            continue
        sol = solve(grid_oracle.to_problem(inst))
        dc = float(np.max(np.abs(sol.c_star[:, 0] - ref[0])))
        rel = abs(sol.cost - ref[1]) / max(ref[1], 1e-12) if ref[1] > 1e-12 else abs(sol.cost - ref[1])
        worst_dc, worst_rel = max(worst_dc, dc), max(worst_rel, rel)
        mismatches += int(sol.status == "infeasible" or dc > 2e-3 or rel > 1e-4)
        n += 1
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 60.0
    detail = (
        f"{n} instances, worst |dc| = {worst_dc:.2e} (<= 2e-3), worst relative cost error {worst_rel:.2e} "
        f"(<= 1e-4), mismatches {mismatches}, {elapsed:.1f} s (< 60 s)"
    )
    record(6, ok, detail)
    assert ok, detail


def test_criterion_07_cost_decrease_and_vanishing_correction():
    parts, ok = [], True
    for name in ("ex1", "ex2"):
        cfg, trace = cached_run(name)
        s = summarize(trace, cfg.topology)
        slack = s.values["max_lyapunov_slack"]
        c_final = s.values["final_c_norm"]
        good = slack <= 1e-6 and c_final <= 1e-3
        ok &= good
        parts.append(
            f"{name}: max V(t+1) - V(t) + |c(t|t)|_P^2 = {slack:.3e} (<= 1e-6) at "
            f"{int(s.values['lyapunov_violations'])} steps over, final max|c| = {c_final:.1e} (<= 1e-3)"
        )
    detail = "; ".join(parts)
    record(7, ok, detail)
    assert ok, detail


def test_criterion_08_candidate_feasibility():
    parts, ok = [], True
    for name in ("ex1", "ex2"):
        cfg, trace = cached_run(name)
        s = summarize(trace, cfg.topology)
        worst = s.values["max_candidate_residual"]
        ok &= worst <= 1e-6
        parts.append(f"{name}: max candidate residual {worst:.3e} (<= 1e-6), {int(s.values['candidate_violations'])} agent-steps over")
    detail = "; ".join(parts)
    record(8, ok, detail)
    assert ok, detail


def test_criterion_09_tube_invariant_across_seeds():
    worst = {}
    for name in ("ex1", "ex2"):
        for seed in SEEDS:
            cfg, trace = cached_run(name, seed=seed)
            gap = float(np.nanmax(trace.tube_gap[: trace.steps_completed]) - cfg.eta)
            if trace.steps_completed < cfg.T:
                gap = np.inf
            worst[(name, seed)] = gap
    top = max(worst.values())
    ok = top <= 1e-6
    detail = f"max over 2 examples x {len(SEEDS)} seeds of |x* - xhat| - eta = {top:.3e} (<= 1e-6)"
    record(9, ok, detail)
    assert ok, detail


@pytest.mark.parametrize("name", ["ex1", "ex2"])
def test_criterion_10_deterministic_csv(name):
    cfg = scenario.packaged(name).with_overrides(seed=7, T=40)
    a, b = trace_to_csv(run(cfg)), trace_to_csv(run(cfg))
    ok = a == b
    prev = ACCEPTANCE_LINES.get(10)
    detail = f"{name} seed 7 T=40 traces byte-identical: {ok}"
    if prev is not None:
        ok = ok and prev.startswith("[PASS]")
        detail = prev.split(": ", 1)[1] + "; " + detail
    record(10, ok, detail)
    assert a == b

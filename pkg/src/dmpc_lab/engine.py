"""Closed-loop simulation of the robust DMPC consensus scheme and baselines.

Per step ``t`` and agent ``i``: measure ``x_i(t)``; pick the freshest common
stamp ``t'`` and rebuild assumed trajectories; solve the agent problem with
the shifted previous plan as warm start; broadcast the new plan through the
delayed channel; apply the first input.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .design import FeasibilityCertificate, TerminalSpec, TubeSpec, certify
from .dmpc import FEAS_TOL, DmpcProblem, SolverSettings, candidate, residuals, solve
from .dynamics import FEAS_TOL as INPUT_TOL
from .dynamics import AgentModel, require_stabilizable
from .errors import DimensionMismatch, Infeasible, InvalidHorizon
from .initialization import INIT_MODES, initial_plan
from .network import BroadcastMessage, DelayProcess, Mailbox, build_assumed, common_base_time, enqueue_broadcast
from .topology import Topology

log = logging.getLogger(__name__)

CONTROLLERS = ("robust_dmpc", "delayed_linear", "saturated_linear")
CLOSED_LOOP_TOL = 1e-9
TAIL_FRACTION = 0.2


@dataclass
class ScenarioConfig:
    """Everything needed for one deterministic run.

    ``P`` is either one (m, m) weight shared by all agents or a list of them.
    ``seed``, when not ``None``, replaces the delay process seed.
    """

    model: AgentModel
    topology: Topology
    K: NDArray[np.float64]
    terminal: TerminalSpec
    eta: float
    N: int
    P: list[NDArray[np.float64]]
    delay: DelayProcess
    x0: NDArray[np.float64]
    T: int = 100
    seed: int | None = None
    controller: str = "robust_dmpc"
    init: str = "open_loop"
    K_bounded: NDArray[np.float64] | None = None
    solver: SolverSettings = field(default_factory=SolverSettings)
    name: str = ""

    def __post_init__(self):
        n, m, M = self.model.n, self.model.m, self.topology.M
        self.K = np.asarray(self.K, dtype=float).reshape(m, n)
        self.x0 = np.asarray(self.x0, dtype=float)
        if self.x0.shape != (M, n):
            raise DimensionMismatch(f"initial states must be ({M}, {n}), got {self.x0.shape}")
        P = self.P
        if not isinstance(P, (list, tuple)):
            P = [P] * M
        P = [np.atleast_2d(np.asarray(p, dtype=float)) for p in P]
        if len(P) != M:
            raise DimensionMismatch(f"need one cost weight per agent, got {len(P)}")
        self.P = [p * np.eye(m) if p.shape == (1, 1) and m > 1 else p for p in P]
        if self.K_bounded is not None:
            self.K_bounded = np.asarray(self.K_bounded, dtype=float).reshape(m, n)
        if self.controller not in CONTROLLERS:
            raise ValueError(f"controller must be one of {CONTROLLERS}, got {self.controller!r}")
        if self.init not in INIT_MODES:
            raise ValueError(f"init must be one of {INIT_MODES}, got {self.init!r}")
        if self.terminal.M != M or self.terminal.S.shape != (n, n):
            raise DimensionMismatch("terminal spec does not match the agent count or state size")
        if not (1 <= self.delay.tau_bar < self.N):
            raise InvalidHorizon(f"need 1 <= tau_bar < N, got tau_bar={self.delay.tau_bar}, N={self.N}")
        if self.T < 1:
            raise ValueError("T must be >= 1")
        TubeSpec(self.eta)
        require_stabilizable(self.model)

    @property
    def delay_process(self) -> DelayProcess:
        return self.delay if self.seed is None else replace(self.delay, seed=int(self.seed))

    def with_overrides(self, **kw) -> "ScenarioConfig":
        return replace(self, **kw)


@dataclass
class SimulationTrace:
    """Per-step records of one run.

    Shapes use ``T`` steps and ``M`` agents; state records have ``T + 1``
    rows, per-step decision records have ``T`` rows. Entries after an abort
    are NaN (numeric) or ``""`` (status).
    """

    controller: str
    states: NDArray[np.float64]  # (T+1, M, n)
    inputs: NDArray[np.float64]  # (T, M, m)
    c0: NDArray[np.float64]  # (T, M, m)
    V: NDArray[np.float64]  # (T, M)
    D: NDArray[np.float64]  # (T+1,)
    dist_C: NDArray[np.float64]  # (T+1,)
    t_prime: NDArray[np.int64]  # (T, M)
    status: NDArray[np.object_]  # (T, M)
    residual: NDArray[np.float64]  # (T, M)
    candidate_residual: NDArray[np.float64]  # (T, M)
    tube_gap: NDArray[np.float64]  # (T, M) max_k |x*(k) - xhat(k)|, k < N
    closed_loop_error: NDArray[np.float64]  # (T, M)
    lyapunov_slack: NDArray[np.float64]  # (T, M) at t >= 1
    deadline_violations: int = 0
    steps_completed: int = 0
    abort_reason: str = ""
    certificate: FeasibilityCertificate | None = None
    u_max: NDArray[np.float64] | None = None
    eta: float = 0.0

    @property
    def T(self) -> int:
        return self.inputs.shape[0]


def _empty_trace(controller: str, T: int, M: int, n: int, m: int) -> SimulationTrace:
    nan = np.nan
    return SimulationTrace(
        controller=controller,
        states=np.full((T + 1, M, n), nan),
        inputs=np.full((T, M, m), nan),
        c0=np.full((T, M, m), nan),
        V=np.full((T, M), nan),
        D=np.full(T + 1, nan),
        dist_C=np.full(T + 1, nan),
        t_prime=np.full((T, M), -1, dtype=np.int64),
        status=np.full((T, M), "", dtype=object),
        residual=np.full((T, M), nan),
        candidate_residual=np.full((T, M), nan),
        tube_gap=np.full((T, M), nan),
        closed_loop_error=np.full((T, M), nan),
        lyapunov_slack=np.full((T, M), nan),
    )


def disagreement(x: ArrayLike, topology: Topology) -> float:
    """``sum_i sum_j a_ij |x_i - x_j| / M`` for stacked states of shape (M, n)."""
    x = np.asarray(x, dtype=float).reshape(topology.M, -1)
    total = 0.0
    for i in range(topology.M):
        for j in topology.neighbors[i]:
            total += topology.adjacency[i, j] * float(np.linalg.norm(x[i] - x[j]))
    return total / topology.M


def distance_to_consensus(x: ArrayLike) -> float:
    """Euclidean distance from stacked states (M, n) to the consensus subspace."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return float(np.linalg.norm(x - x.mean(axis=0)))


def neighbor_gap(x_i: ArrayLike, neighbor_states, weights) -> NDArray[np.float64]:
    x_i = np.asarray(x_i, dtype=float)
    gap = np.zeros_like(x_i)
    for a, x_j in zip(weights, neighbor_states):
        gap += a * (x_i - np.asarray(x_j, dtype=float))
    return gap


def baseline_saturated(x: ArrayLike, topology: Topology, K_bounded: ArrayLike, u_max: ArrayLike) -> NDArray[np.float64]:
    """Saturated protocol on true states: ``clip(K' sum_j a_ij (x_i - x_j), -u_max, u_max)``."""
    x = np.asarray(x, dtype=float).reshape(topology.M, -1)
    Kb = np.atleast_2d(np.asarray(K_bounded, dtype=float))
    ub = np.broadcast_to(np.asarray(u_max, dtype=float), (Kb.shape[0],))
    gaps = np.asarray(topology.laplacian) @ x
    return np.clip(gaps @ Kb.T, -ub, ub)


def baseline_delayed_linear(x_i: ArrayLike, assumed_neighbors, weights, K: ArrayLike) -> NDArray[np.float64]:
    """Unsaturated protocol on assumed neighbor states: ``K sum_j a_ij (x_i - xhat_j(t|t))``."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    return K @ neighbor_gap(x_i, [np.asarray(v)[0] for v in assumed_neighbors], weights)


def _broadcast_all(mailbox, plans, t, topology, delays: DelayProcess):
    for i, traj in enumerate(plans):
        msg = BroadcastMessage(sender=i, stamp=t, trajectory=traj)
        if delays.per_edge and t > 0:
            delay = {j: delays.sample(t, i, j) for j in range(topology.M) if j != i}
        else:
            delay = delays.sample(t)
        enqueue_broadcast(mailbox, msg, delay, [j for j in range(topology.M) if j != i])


def run(config: ScenarioConfig) -> SimulationTrace:
    """Simulate ``config.T`` steps of the configured controller.

    Raises:
        NoCommonStamp, TubePreconditionViolated, Infeasible: the run stops;
            the partial trace is attached to the exception as ``.trace``.
    """
    model, topo, N = config.model, config.topology, config.N
    M, n, m = topo.M, model.n, model.m
    T = config.T
    delays = config.delay_process
    trace = _empty_trace(config.controller, T, M, n, m)
    trace.u_max = np.asarray(model.u_max).copy()
    trace.eta = float(config.eta)
    trace.certificate = certify(model, topo, config.K, N, delays.tau_bar, config.eta)
    if not trace.certificate.passed:
        log.warning("feasibility certificate failed: %s", "; ".join(trace.certificate.failures))

    x = config.x0.copy()
    trace.states[0] = x
    trace.D[0] = disagreement(x, topo)
    trace.dist_C[0] = distance_to_consensus(x)
    try:
        if config.controller == "robust_dmpc":
            _run_dmpc(config, trace, delays)
        elif config.controller == "delayed_linear":
            _run_delayed_linear(config, trace, delays)
        else:
            _run_saturated(config, trace)
    except Exception as exc:
        trace.abort_reason = f"{type(exc).__name__}: {exc}"
        exc.trace = trace
        raise
    return trace


def _record_state(trace: SimulationTrace, t: int, x: NDArray, topo: Topology) -> None:
    trace.states[t] = x
    trace.D[t] = disagreement(x, topo)
    trace.dist_C[t] = distance_to_consensus(x)


def _run_dmpc(config: ScenarioConfig, trace: SimulationTrace, delays: DelayProcess) -> None:
    model, topo, N, K = config.model, config.topology, config.N, config.K
    M, m = topo.M, model.m
    tube = TubeSpec(config.eta)
    mailbox = Mailbox(delays.tau_bar)
    plan0 = initial_plan(config.init, model, K, config.x0, N, config.terminal.S, topo)
    x = config.x0.copy()
    prev_c: list[NDArray | None] = [None] * M
    prev_V = np.full(M, np.nan)

    for t in range(config.T):
        assumed_cache: dict[int, dict] = {}
        sols = []
        for i in range(M):
            nbrs = topo.neighbors[i]
            if t == 0:
                xhat = {j: plan0.trajectories[j] for j in (i, *nbrs)}
                t_prime = 0
                warm = plan0.corrections[i]
            else:
                t_prime = common_base_time(mailbox, i, nbrs, t)
                if t_prime not in assumed_cache:
                    msgs = {j: mailbox.get(j, t_prime) for j in range(M)}
                    assumed_cache[t_prime] = {j: a.values for j, a in build_assumed(msgs, t, model, K, topo).items()}
                xhat = assumed_cache[t_prime]
                warm = candidate(prev_c[i], t - 1, t, delays.tau_bar)
            problem = DmpcProblem(
                model=model,
                K=K,
                N=N,
                P=config.P[i],
                tube=tube,
                terminal=config.terminal,
                x_now=x[i],
                assumed_self=xhat[i],
                assumed_neighbors={j: xhat[j] for j in nbrs},
                weights={j: float(topo.adjacency[i, j]) for j in nbrs},
            )
            sol = solve(problem, warm, config.solver)
            trace.t_prime[t, i] = t_prime
            trace.status[t, i] = sol.status
            trace.residual[t, i] = sol.max_residual
            trace.candidate_residual[t, i] = max(sol.candidate_residuals.values())
            trace.tube_gap[t, i] = float(np.max(np.linalg.norm(sol.x_star[:N] - xhat[i][:N], axis=1)))
            trace.c0[t, i] = sol.c_star[0]
            trace.V[t, i] = sol.cost
            trace.inputs[t, i] = sol.u_star[0]
            if t > 0:
                c_prev0 = prev_c[i][0]
                trace.lyapunov_slack[t, i] = sol.cost - prev_V[i] + float(c_prev0 @ config.P[i] @ c_prev0)
            if sol.status == "infeasible":
                raise Infeasible(f"agent {i} at t={t}: residuals {sol.residuals}")
            sols.append(sol)
        # write phase: broadcasts, then plant update
        _broadcast_all(mailbox, [s.x_star for s in sols], t, topo, delays)
        trace.deadline_violations += len(mailbox.deadline_violations(t + 1))
        x_next = np.array([model.A @ x[i] + model.B @ sols[i].u_star[0] for i in range(M)])
        for i in range(M):
            trace.closed_loop_error[t, i] = float(np.max(np.abs(x_next[i] - sols[i].x_star[1])))
            prev_c[i] = sols[i].c_star
            prev_V[i] = sols[i].cost
        x = x_next
        _record_state(trace, t + 1, x, topo)
        trace.steps_completed = t + 1


def _run_delayed_linear(config: ScenarioConfig, trace: SimulationTrace, delays: DelayProcess) -> None:
    """Predesigned protocol without optimization, fed with delayed measurements.

    Agents broadcast a constant (hold) trajectory of their measured state, so
    ``xhat_j(t|t) = x_j(t')`` for the chosen common stamp.
    """
    model, topo, N, K = config.model, config.topology, config.N, config.K
    M = topo.M
    mailbox = Mailbox(delays.tau_bar)
    x = config.x0.copy()
    for t in range(config.T):
        _broadcast_all(mailbox, [np.repeat(x[i][None], N + 1, axis=0) for i in range(M)], t, topo, delays)
        u = np.empty((M, model.m))
        for i in range(M):
            nbrs = topo.neighbors[i]
            t_prime = common_base_time(mailbox, i, nbrs, t) if t > 0 else 0
            if t == 0:
                stale = {j: x[j][None] for j in nbrs}
            else:
                stale = {j: mailbox.get(j, t_prime).trajectory[t - t_prime :] for j in nbrs}
            u[i] = baseline_delayed_linear(x[i], [stale[j] for j in nbrs], [topo.adjacency[i, j] for j in nbrs], K)
            trace.t_prime[t, i] = t_prime
            trace.status[t, i] = "baseline"
        trace.inputs[t] = u
        trace.c0[t] = 0.0
        x = x @ model.A.T + u @ model.B.T
        _record_state(trace, t + 1, x, topo)
        trace.steps_completed = t + 1


def _run_saturated(config: ScenarioConfig, trace: SimulationTrace) -> None:
    model, topo = config.model, config.topology
    Kb = config.K_bounded
    if Kb is None:
        log.info("no bounded gain configured; saturating the consensus gain K instead")
        Kb = config.K
    x = config.x0.copy()
    for t in range(config.T):
        u = baseline_saturated(x, topo, Kb, model.u_max)
        trace.inputs[t] = u
        trace.c0[t] = 0.0
        trace.t_prime[t] = t
        trace.status[t] = "baseline"
        x = x @ model.A.T + u @ model.B.T
        _record_state(trace, t + 1, x, topo)
        trace.steps_completed = t + 1


@dataclass
class RunSummary:
    """Pass/fail per invariant family plus empirical readouts.

    ``hard`` families (input box, tube, closed-loop consistency, delivery
    deadline) decide the exit status of a robust run; the rest are reported.
    """

    controller: str
    steps: int
    hard: dict[str, bool]
    reported: dict[str, bool]
    values: dict[str, float]

    @property
    def ok(self) -> bool:
        return all(self.hard.values())

    def lines(self) -> list[str]:
        out = [f"controller = {self.controller}", f"steps = {self.steps}"]
        out += [f"{k} = {'pass' if v else 'FAIL'}" for k, v in self.hard.items()]
        out += [f"{k} = {'pass' if v else 'fail (reported)'}" for k, v in self.reported.items()]
        out += [f"{k} = {v!r}" for k, v in self.values.items()]
        return out


def gamma_readout(trace: SimulationTrace, topology: Topology) -> float:
    """Largest neighbor gap over the trailing fraction of the run."""
    T = trace.steps_completed
    start = max(0, int(np.floor((1.0 - TAIL_FRACTION) * T)))
    best = 0.0
    for t in range(start, T + 1):
        x = trace.states[t]
        for i, j in topology.edges:
            best = max(best, float(np.linalg.norm(x[i] - x[j])))
    return best


def summarize(trace: SimulationTrace, topology: Topology) -> RunSummary:
    T = trace.steps_completed
    u = trace.inputs[:T]
    umax = trace.u_max if trace.u_max is not None else np.inf
    input_excess = float(np.max(np.abs(u) - umax)) if T else 0.0
    values = {
        "max_input_excess": input_excess,
        "D0": float(trace.D[0]),
        "D_final": float(trace.D[T]),
        "D_ratio": float(trace.D[T] / trace.D[0]) if trace.D[0] > 0 else 0.0,
        "dist_C_final": float(trace.dist_C[T]),
        "gamma": gamma_readout(trace, topology),
    }
    reported: dict[str, bool] = {"convergence": bool(trace.D[T] <= trace.D[0] / 10.0)}
    hard: dict[str, bool] = {"input_box": input_excess <= INPUT_TOL}
    if trace.controller == "robust_dmpc":
        status = trace.status[:T]
        tube_excess = float(np.nanmax(trace.tube_gap[:T]) - trace.eta) if T else 0.0
        cl = float(np.nanmax(trace.closed_loop_error[:T])) if T else 0.0
        lyap = trace.lyapunov_slack[1:T]
        lyap_max = float(np.nanmax(lyap)) if lyap.size else 0.0
        cand_max = float(np.nanmax(trace.candidate_residual[1:T])) if T > 1 else 0.0
        c_final = float(np.max(np.linalg.norm(trace.c0[T - 1], axis=1))) if T else 0.0
        hard.update(
            {
                "tube": tube_excess <= FEAS_TOL,
                "closed_loop": cl <= CLOSED_LOOP_TOL,
                "delivery_deadline": trace.deadline_violations == 0,
            }
        )
        reported.update(
            {
                "lyapunov_decrease": lyap_max <= FEAS_TOL,
                "candidate_feasible": cand_max <= FEAS_TOL,
                "vanishing_correction": c_final <= 1e-3,
            }
        )
        values.update(
            {
                "max_tube_excess": tube_excess,
                "max_closed_loop_error": cl,
                "max_lyapunov_slack": lyap_max,
                "lyapunov_violations": float(np.sum(lyap > FEAS_TOL)),
                "max_candidate_residual": cand_max,
                "candidate_violations": float(np.sum(trace.candidate_residual[1:T] > FEAS_TOL)),
                "final_c_norm": c_final,
                "fallback_steps": float(np.sum(status == "feasible_fallback")),
                "infeasible_steps": float(np.sum(status == "infeasible")),
            }
        )
    if trace.abort_reason:
        hard["completed"] = False
    return RunSummary(trace.controller, T, hard, reported, values)

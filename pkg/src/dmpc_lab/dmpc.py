"""Per-agent robust DMPC problem: formulation, solution, candidate plans.

The agent chooses corrections ``c(k)`` on top of the delayed consensus
protocol::

    u(k)   = K sum_j a_ij (x(k) - xhat_j(k)) + c(k)
    x(k+1) = A x(k) + B u(k),     x(0) = x_now

minimizing ``sum_k c(k)' P c(k)`` subject to the input box, a tube
``||x(k) - xhat_i(k)|| <= eta`` for ``k < N`` and the terminal inequality
``sum_j a_ij x(N)' S (x(N) - xhat_j(N)) <= epsilon_sq / M``.

The map ``c -> u`` is affine and invertible (unit block lower-triangular),
so the solver works on ``u`` directly: the box becomes simple bounds and
every constraint is a convex quadratic in ``u``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import _qcqp
from .design import TerminalSpec, TubeSpec
from .dynamics import FEAS_TOL as INPUT_TOL
from .dynamics import AgentModel
from .errors import DimensionMismatch, Infeasible, StaleSolution, TubePreconditionViolated

FEAS_TOL = 1e-6
STATUSES = ("optimal", "feasible_fallback", "infeasible")


@dataclass(frozen=True)
class SolverSettings:
    outer_tol: float = 1e-8
    inner_tol: float = 1e-10
    max_outer: int = 200
    max_inner: int = 2000
    rho0: float = 10.0
    feas_tol: float = FEAS_TOL


def _as_weight(P, m: int) -> NDArray[np.float64]:
    P = np.array(P, dtype=float)
    if P.ndim == 0:
        P = P * np.eye(m)
    if P.shape != (m, m):
        raise DimensionMismatch(f"P must be {m}x{m}, got {P.shape}")
    if not np.allclose(P, P.T) or np.linalg.eigvalsh(P).min() <= 0:
        raise ValueError("P must be symmetric positive definite")
    return P


@dataclass
class DmpcProblem:
    """One agent's optimization instance at one time step.

    Attributes:
        model: shared dynamics.
        K: consensus gain, (m, n).
        N: horizon.
        P: (m, m) weight, or a scalar multiple of the identity.
        tube: estimation-error ball.
        terminal: terminal-set parameters.
        x_now: measured state.
        assumed_self: (N+1, n) assumed trajectory of this agent.
        assumed_neighbors: neighbor id to (N+1, n) assumed trajectory.
        weights: neighbor id to ``a_ij``.
        u_bound: per-channel input bound; defaults to ``model.u_max``.
    """

    model: AgentModel
    K: NDArray[np.float64]
    N: int
    P: NDArray[np.float64]
    tube: TubeSpec
    terminal: TerminalSpec
    x_now: NDArray[np.float64]
    assumed_self: NDArray[np.float64]
    assumed_neighbors: Mapping[int, NDArray[np.float64]]
    weights: Mapping[int, float]
    u_bound: NDArray[np.float64] | None = None

    def __post_init__(self):
        n, m = self.model.n, self.model.m
        self.K = np.asarray(self.K, dtype=float).reshape(m, n)
        if self.N < 2:
            raise ValueError(f"horizon must be >= 2, got {self.N}")
        self.P = _as_weight(self.P, m)
        self.x_now = np.asarray(self.x_now, dtype=float)
        if self.x_now.shape != (n,):
            raise DimensionMismatch(f"x_now must have shape ({n},), got {self.x_now.shape}")
        self.assumed_self = np.asarray(self.assumed_self, dtype=float)
        self.assumed_neighbors = {j: np.asarray(v, dtype=float) for j, v in self.assumed_neighbors.items()}
        for name, traj in [("self", self.assumed_self), *self.assumed_neighbors.items()]:
            if traj.shape != (self.N + 1, n):
                raise DimensionMismatch(f"assumed trajectory {name} must be {(self.N + 1, n)}, got {traj.shape}")
        if set(self.weights) != set(self.assumed_neighbors):
            raise DimensionMismatch("weights and assumed_neighbors must have the same keys")
        ub = self.model.u_max if self.u_bound is None else self.u_bound
        self.u_bound = np.broadcast_to(np.asarray(ub, dtype=float), (m,)).copy()

    @property
    def neighbor_mean(self) -> NDArray[np.float64]:
        """``sum_j a_ij xhat_j(k)`` for ``k = 0 .. N``."""
        out = np.zeros((self.N + 1, self.model.n))
        for j, a in self.weights.items():
            out += a * self.assumed_neighbors[j]
        return out

    @property
    def weight_sum(self) -> float:
        return float(sum(self.weights.values()))


@dataclass
class DmpcSolution:
    c_star: NDArray[np.float64]
    u_star: NDArray[np.float64]
    x_star: NDArray[np.float64]
    cost: float
    residuals: dict[str, float]
    status: str
    outer_iterations: int = 0
    inner_iterations: int = 0
    candidate_residuals: dict[str, float] = field(default_factory=dict)

    @property
    def max_residual(self) -> float:
        return max(self.residuals.values())


def rollout(problem: DmpcProblem, c_seq: ArrayLike) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Forward recursion of the corrected protocol; returns ``(x, u)``."""
    m, n, N = problem.model.m, problem.model.n, problem.N
    c = np.asarray(c_seq, dtype=float).reshape(-1, m) if np.size(c_seq) else np.zeros((0, m))
    if c.shape != (N, m):
        raise DimensionMismatch(f"c must be ({N}, {m}), got {c.shape}")
    A, B, K = problem.model.A, problem.model.B, problem.K
    nbar = problem.neighbor_mean
    wsum = problem.weight_sum
    x = np.empty((N + 1, n))
    u = np.empty((N, m))
    x[0] = problem.x_now
    for k in range(N):
        u[k] = K @ (wsum * x[k] - nbar[k]) + c[k]
        x[k + 1] = A @ x[k] + B @ u[k]
    return x, u


def cost(c_seq: ArrayLike, P: ArrayLike) -> float:
    c = np.atleast_2d(np.asarray(c_seq, dtype=float))
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if c.shape[1] != P.shape[0] and c.size:
        c = c.reshape(-1, P.shape[0])
    return float(np.einsum("ki,ij,kj->", c, P, c))


def residuals(problem: DmpcProblem, c_seq: ArrayLike) -> dict[str, float]:
    """Largest violation (natural units, clipped at 0) of each constraint family."""
    x, u = rollout(problem, c_seq)
    N = problem.N
    box = float(np.max(np.abs(u) - problem.u_bound))
    tube = float(np.max(np.linalg.norm(x[:N] - problem.assumed_self[:N], axis=1)) - problem.tube.eta)
    lhs = terminal_lhs(problem, x[N])
    term = lhs - problem.terminal.level
    return {"input": max(0.0, box), "tube": max(0.0, tube), "terminal": max(0.0, term)}


def terminal_lhs(problem: DmpcProblem, x_N: ArrayLike) -> float:
    x_N = np.asarray(x_N, dtype=float)
    S = problem.terminal.S
    nb = problem.neighbor_mean[problem.N]
    return float(problem.weight_sum * (x_N @ S @ x_N) - x_N @ S @ nb)


@dataclass
class CondensedProblem:
    """Problem data expressed in the stacked input ``u`` (length ``N m``)."""

    Gam: NDArray[np.float64]  # (N+1, n, N m): x_k = xa_k + Gam_k u
    xa: NDArray[np.float64]  # (N+1, n)
    H: NDArray[np.float64]  # c = H u + h
    h: NDArray[np.float64]
    Q: NDArray[np.float64]
    q: NDArray[np.float64]
    const: float
    Pc: NDArray[np.float64]
    rc: NDArray[np.float64]
    sc: NDArray[np.float64]
    lo: NDArray[np.float64]
    hi: NDArray[np.float64]


def condense(problem: DmpcProblem) -> CondensedProblem:
    A, B, K = problem.model.A, problem.model.B, problem.K
    n, m, N = problem.model.n, problem.model.m, problem.N
    nu = N * m
    wsum = problem.weight_sum
    nbar = problem.neighbor_mean

    Gam = np.zeros((N + 1, n, nu))
    xa = np.empty((N + 1, n))
    xa[0] = problem.x_now
    for k in range(N):
        xa[k + 1] = A @ xa[k]
        Gam[k + 1] = A @ Gam[k]
        Gam[k + 1][:, k * m : (k + 1) * m] += B

    H = np.eye(nu)
    h = np.empty(nu)
    for k in range(N):
        H[k * m : (k + 1) * m] -= wsum * (K @ Gam[k])
        h[k * m : (k + 1) * m] = -K @ (wsum * xa[k] - nbar[k])
    Pbar = np.kron(np.eye(N), problem.P)
    Q = H.T @ Pbar @ H
    Q = 0.5 * (Q + Q.T)
    q = 2.0 * H.T @ (Pbar @ h)
    const = float(h @ Pbar @ h)

    eta2 = problem.tube.eta**2
    Pc = np.empty((N, nu, nu))
    rc = np.empty((N, nu))
    sc = np.empty(N)
    for k in range(1, N):
        G = Gam[k]
        e = xa[k] - problem.assumed_self[k]
        Pc[k - 1] = G.T @ G / eta2
        rc[k - 1] = 2.0 * (G.T @ e) / eta2
        sc[k - 1] = e @ e / eta2 - 1.0
    S = problem.terminal.S
    G = Gam[N]
    e = xa[N]
    nb = nbar[N]
    level = problem.terminal.level
    scale = max(abs(level), 1e-6)
    PN = wsum * (G.T @ S @ G)
    Pc[N - 1] = 0.5 * (PN + PN.T) / scale
    rc[N - 1] = (2.0 * wsum * (G.T @ (S @ e)) - G.T @ (S @ nb)) / scale
    sc[N - 1] = (wsum * (e @ S @ e) - e @ S @ nb - level) / scale

    hi = np.tile(problem.u_bound, N)
    return CondensedProblem(Gam, xa, H, h, Q, q, const, Pc, rc, sc, -hi, hi)


def _finish(problem: DmpcProblem, c: NDArray, status: str, **kw) -> DmpcSolution:
    x, u = rollout(problem, c)
    return DmpcSolution(
        c_star=c,
        u_star=u,
        x_star=x,
        cost=cost(c, problem.P),
        residuals=residuals(problem, c),
        status=status,
        **kw,
    )


def _acceptable(res: dict[str, float], feas_tol: float) -> bool:
    # applied inputs must meet the strict admissibility tolerance
    return res["input"] <= INPUT_TOL and res["tube"] <= feas_tol and res["terminal"] <= feas_tol


def check_tube_precondition(problem: DmpcProblem, tol: float = FEAS_TOL) -> float:
    gap = float(np.linalg.norm(problem.x_now - problem.assumed_self[0]))
    if gap > problem.tube.eta + tol:
        raise TubePreconditionViolated(
            f"|x_now - xhat(0)| = {gap!r} exceeds eta = {problem.tube.eta!r}"
        )
    return gap


def solve(
    problem: DmpcProblem,
    warm_start: ArrayLike | None = None,
    settings: SolverSettings = SolverSettings(),
    *,
    strict: bool = False,
) -> DmpcSolution:
    """Solve the agent problem, falling back to the warm start when it is better.

    The warm start doubles as the fallback plan: it is returned unchanged
    (status ``feasible_fallback``) when the solver misses its tolerances or
    returns a costlier point while the warm start is feasible.

    Args:
        problem: instance to solve.
        warm_start: (N, m) corrections, usually the shifted previous plan.
        settings: tolerances and iteration caps.
        strict: raise :class:`Infeasible` instead of returning status
            ``"infeasible"``.

    Raises:
        TubePreconditionViolated: ``x_now`` is outside the tube around
            ``xhat_i(0)``.
    """
    check_tube_precondition(problem)
    N, m = problem.N, problem.model.m
    cand = np.zeros((N, m)) if warm_start is None else np.asarray(warm_start, dtype=float).reshape(N, m)
    cand_res = residuals(problem, cand)
    cand_ok = _acceptable(cand_res, settings.feas_tol)
    cand_cost = cost(cand, problem.P)

    cp = condense(problem)
    _, u0 = rollout(problem, cand)
    u_opt, _lam, code, n_out, n_in, _viol = _qcqp.solve_qcqp(
        cp.Q,
        cp.q,
        cp.Pc,
        cp.rc,
        cp.sc,
        cp.lo,
        cp.hi,
        np.ascontiguousarray(u0.reshape(-1)),
        float(settings.rho0),
        float(settings.outer_tol),
        float(settings.inner_tol),
        int(settings.max_outer),
        int(settings.max_inner),
    )
    c_opt = (cp.H @ u_opt + cp.h).reshape(N, m)
    sol = _finish(problem, c_opt, "optimal", outer_iterations=int(n_out), inner_iterations=int(n_in))
    sol.candidate_residuals = cand_res
    solved = code != _qcqp.MAX_OUTER and _acceptable(sol.residuals, settings.feas_tol)
    if solved and (not cand_ok or sol.cost <= cand_cost * (1.0 + 1e-12) + 1e-15):
        return sol
    if cand_ok:
        fb = _finish(problem, cand, "feasible_fallback", outer_iterations=int(n_out), inner_iterations=int(n_in))
        fb.candidate_residuals = cand_res
        return fb
    if _acceptable(sol.residuals, settings.feas_tol):
        # iteration cap hit but the iterate itself satisfies every constraint
        sol.status = "feasible_fallback"
        return sol
    if strict:
        raise Infeasible(f"no feasible plan: solver residuals {sol.residuals}, candidate residuals {cand_res}")
    sol.status = "infeasible"
    return sol


def candidate(prev_c: ArrayLike, prev_stamp: int, t_next: int, tau_bar: int) -> NDArray[np.float64]:
    """Shift a previous plan onto the horizon starting at ``t_next``.

    Entry ``k`` is the old correction for absolute time ``t_next + k`` when
    that time is still inside the old horizon, and zero afterwards.

    Raises:
        StaleSolution: ``t_next - prev_stamp`` is outside ``[1, tau_bar]``.
    """
    prev = np.asarray(prev_c, dtype=float)
    if prev.ndim == 1:
        prev = prev.reshape(-1, 1)
    shift = t_next - prev_stamp
    if not (1 <= shift <= tau_bar):
        raise StaleSolution(f"plan from t={prev_stamp} cannot seed t={t_next} (window {tau_bar})")
    N = prev.shape[0]
    out = np.zeros_like(prev)
    if shift < N:
        out[: N - shift] = prev[shift:]
    return out

"""Initial assumed trajectories at ``t = 0``.

``open_loop``
    ``xhat_i(k) = A^k x_i(0)``, ``k = 0 .. N``, with zero corrections as the
    first warm start.

``coordinated``
    A joint admissible input plan for all agents that minimizes the largest
    per-agent terminal value. Each agent's first warm start is the correction
    sequence that reproduces its share of that plan, so the plan is feasible
    for every agent's first problem whenever its terminal values fit the level.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import minimize

from .dynamics import AgentModel
from .topology import Topology

INIT_MODES = ("open_loop", "coordinated")


@dataclass
class InitialPlan:
    """Per-agent ``(N+1, n)`` trajectories and ``(N, m)`` starting corrections."""

    trajectories: NDArray[np.float64]  # (M, N+1, n)
    corrections: NDArray[np.float64]  # (M, N, m)
    terminal_values: NDArray[np.float64]  # (M,)


def _terminal_values(S: NDArray, topology: Topology, xN: NDArray) -> NDArray:
    Adj = np.asarray(topology.adjacency)
    SX = xN @ S
    own = np.einsum("in,in->i", SX, xN)
    cross = np.einsum("in,in->i", SX, Adj @ xN)
    return own - cross


def _input_maps(model: AgentModel, N: int) -> tuple[NDArray, NDArray]:
    """``x_k = A^k x0 + G_k u`` for one agent; returns powers (N+1, n, n) and G (N+1, n, N m)."""
    n, m = model.n, model.m
    powers = np.empty((N + 1, n, n))
    G = np.zeros((N + 1, n, N * m))
    powers[0] = np.eye(n)
    for k in range(N):
        powers[k + 1] = model.A @ powers[k]
        G[k + 1] = model.A @ G[k]
        G[k + 1][:, k * m : (k + 1) * m] += model.B
    return powers, G


def _corrections(model: AgentModel, K: NDArray, topology: Topology, traj: NDArray, inputs: NDArray) -> NDArray:
    """``c_i(k) = u_i(k) - K sum_j a_ij (x_i(k) - x_j(k))`` along a joint plan."""
    Adj = np.asarray(topology.adjacency)
    gap = traj - np.einsum("ij,jkn->ikn", Adj, traj)
    return inputs - np.einsum("ikn,mn->ikm", gap[:, :-1], K)


def open_loop_plan(model: AgentModel, x0: NDArray, N: int, S: NDArray, topology: Topology) -> InitialPlan:
    x0 = np.asarray(x0, dtype=float)
    M = x0.shape[0]
    powers, _ = _input_maps(model, N)
    traj = np.einsum("kab,ib->ika", powers, x0)
    return InitialPlan(traj, np.zeros((M, N, model.m)), _terminal_values(S, topology, traj[:, N]))


def coordinated_plan(
    model: AgentModel,
    K: NDArray,
    x0: NDArray,
    N: int,
    S: NDArray,
    topology: Topology,
    *,
    maxiter: int = 1000,
) -> InitialPlan:
    """Joint box-feasible plan minimizing ``max_i`` terminal value.

    First the convex sum of terminal values (``x_N' (L kron S) x_N``) is
    minimized over the box with L-BFGS-B; that point seeds an SLSQP epigraph
    problem for the max.
    """
    x0 = np.asarray(x0, dtype=float)
    K = np.asarray(K, dtype=float)
    M, n, m = x0.shape[0], model.n, model.m
    powers, G = _input_maps(model, N)
    GN = G[N]
    free_N = x0 @ powers[N].T  # (M, n)
    L = np.asarray(topology.laplacian)
    Adj = np.asarray(topology.adjacency)
    nu = N * m
    bounds = [(-b, b) for b in np.tile(model.u_max, N)] * M

    def terminal(U):
        return free_N + U.reshape(M, nu) @ GN.T

    def total(U):
        xN = terminal(U)
        SX = xN @ S
        val = float(np.sum(SX * (L @ xN)))
        grad = 2.0 * (L @ SX) @ GN
        return val, grad.reshape(-1)

    res = minimize(total, np.zeros(M * nu), jac=True, method="L-BFGS-B", bounds=bounds,
                   options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 5000})
    U0 = np.clip(res.x, [b[0] for b in bounds], [b[1] for b in bounds])

    def agent_values(U):
        return _terminal_values(S, topology, terminal(U))

    def agent_jac(U):
        xN = terminal(U)
        SX = xN @ S
        nb = Adj @ xN
        jac = np.zeros((M, M * nu))
        for i in range(M):
            # d/dx_i: 2 S x_i - S nb_i ;  d/dx_j: -a_ij S x_i
            gi = 2.0 * SX[i] - nb[i] @ S
            jac[i, i * nu : (i + 1) * nu] += gi @ GN
            for j in topology.neighbors[i]:
                jac[i, j * nu : (j + 1) * nu] -= Adj[i, j] * SX[i] @ GN
        return jac

    z0 = np.append(U0, agent_values(U0).max())
    cons = {
        "type": "ineq",
        "fun": lambda z: z[-1] - agent_values(z[:-1]),
        "jac": lambda z: np.hstack([-agent_jac(z[:-1]), np.ones((M, 1))]),
    }
    sol = minimize(lambda z: z[-1], z0, jac=lambda z: np.eye(1, z.size, z.size - 1).ravel(),
                   method="SLSQP", bounds=bounds + [(None, None)], constraints=[cons],
                   options={"ftol": 1e-12, "maxiter": maxiter})
    U = np.clip(sol.x[:-1], [b[0] for b in bounds], [b[1] for b in bounds])
    if agent_values(U).max() > agent_values(U0).max():
        U = U0

    inputs = U.reshape(M, N, m)
    traj = np.empty((M, N + 1, n))
    traj[:, 0] = x0
    for k in range(N):
        traj[:, k + 1] = traj[:, k] @ model.A.T + inputs[:, k] @ model.B.T
    corr = _corrections(model, K, topology, traj, inputs)
    return InitialPlan(traj, corr, _terminal_values(S, topology, traj[:, N]))


def initial_plan(mode: str, model: AgentModel, K, x0, N: int, S, topology: Topology) -> InitialPlan:
    if mode == "open_loop":
        return open_loop_plan(model, x0, N, np.asarray(S, dtype=float), topology)
    if mode == "coordinated":
        return coordinated_plan(model, K, x0, N, np.asarray(S, dtype=float), topology)
    raise ValueError(f"init mode must be one of {INIT_MODES}, got {mode!r}")

"""Offline certificates for a pre-designed consensus gain.

Everything here is evaluated once per scenario, before simulation:

* Schur stability of ``A + lam B K`` for every nonzero Laplacian eigenvalue,
* the spectral conditions on the delay-shifted error propagation matrices,
* norm-based outer radii of the reachable estimation-error sets,
* the input box eroded by ``K`` applied to the error ball,
* membership in the per-agent terminal set, nominal or tightened.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .dynamics import AgentModel
from .errors import DimensionMismatch, EigenSolverFailure, EmptyTightenedSet, InvalidHorizon
from .topology import Topology

RADIUS_TOL = 1e-9
MEMBER_TOL = 1e-9


@dataclass(frozen=True)
class TubeSpec:
    """Estimation-error ball ``{d : ||d|| <= eta}``."""

    eta: float

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")


@dataclass(frozen=True)
class TerminalSpec:
    """Per-agent terminal set ``sum_j a_ij x_i' S (x_i - x_j) <= epsilon_sq / M``.

    ``sigma`` only scales the stacked weight ``sigma * (L kron S)`` and does
    not enter the per-agent test.
    """

    S: NDArray[np.float64] = field(repr=False)
    epsilon_sq: float
    M: int
    sigma: float = 1.0

    def __post_init__(self):
        S = np.array(self.S, dtype=float)
        if S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise DimensionMismatch(f"S must be square, got {S.shape}")
        if not np.allclose(S, S.T, atol=1e-12):
            raise ValueError("S must be symmetric")
        if np.linalg.eigvalsh(S).min() < -1e-9:
            raise ValueError("S must be positive semidefinite")
        if self.epsilon_sq < 0 or self.sigma <= 0 or self.M < 1:
            raise ValueError("epsilon_sq >= 0, sigma > 0 and M >= 1 required")
        S.setflags(write=False)
        object.__setattr__(self, "S", S)

    @property
    def level(self) -> float:
        return self.epsilon_sq / self.M

    @property
    def max_eig(self) -> float:
        return float(np.linalg.eigvalsh(self.S).max())


def spectral_radius(mtx: ArrayLike) -> float:
    mtx = np.asarray(mtx, dtype=float)
    if mtx.ndim != 2 or mtx.shape[0] != mtx.shape[1]:
        raise DimensionMismatch(f"spectral radius needs a square matrix, got {mtx.shape}")
    if mtx.size == 0:
        return 0.0
    try:
        eig = np.linalg.eigvals(mtx)
    except np.linalg.LinAlgError as exc:  # pragma: no cover
        raise EigenSolverFailure(str(exc)) from exc
    if not np.all(np.isfinite(eig)):
        raise EigenSolverFailure("eigenvalues are not finite")
    return float(np.max(np.abs(eig)))


def check_consensus_gain(model: AgentModel, topology: Topology, K: ArrayLike) -> list[tuple[float, float]]:
    """``(lam, rho(A + lam B K))`` for each nonzero Laplacian eigenvalue."""
    K = np.asarray(K, dtype=float)
    if K.shape != (model.m, model.n):
        raise DimensionMismatch(f"K must be {model.m}x{model.n}, got {K.shape}")
    BK = model.B @ K
    return [(float(lam), spectral_radius(model.A + lam * BK)) for lam in topology.nonzero_eigenvalues]


def consensus_gain_ok(radii: list[tuple[float, float]]) -> bool:
    return all(r < 1.0 - RADIUS_TOL for _, r in radii)


def _powers(AK: NDArray, count: int) -> list[NDArray]:
    out = [np.eye(AK.shape[0])]
    for _ in range(count):
        out.append(AK @ out[-1])
    return out


def propagation_matrices(model: AgentModel, K: ArrayLike, N: int, n_prime: int) -> list[NDArray]:
    """Matrices ``sum_s A_K^(k-1-s) B K + A_K^k`` for ``k = 1 .. N-1``.

    The sum runs over ``s < k`` while ``k < n_prime`` and over ``s < n_prime``
    afterwards (``A_K = A + B K``).
    """
    K = np.asarray(K, dtype=float)
    BK = model.B @ K
    AK = model.A + BK
    pw = _powers(AK, N)
    mats = []
    for k in range(1, N):
        upper = k if k < n_prime else n_prime
        acc = pw[k].copy()
        for s in range(upper):
            acc += pw[k - 1 - s] @ BK
        mats.append(acc)
    return mats


def check_delay_horizon(model: AgentModel, K: ArrayLike, N: int, tau_bar: int) -> tuple[float, bool]:
    """Worst spectral radius of the propagation matrices over every realizable delay.

    ``n_prime = N - tau`` is scanned for ``tau = 1 .. tau_bar`` and the largest
    radius over both index families is returned with ``radius <= 1``.

    Raises:
        InvalidHorizon: unless ``1 <= tau_bar < N``.
    """
    if not (1 <= tau_bar < N):
        raise InvalidHorizon(f"need 1 <= tau_bar < N, got tau_bar={tau_bar}, N={N}")
    worst = 0.0
    for tau in range(1, tau_bar + 1):
        for mat in propagation_matrices(model, K, N, N - tau):
            worst = max(worst, spectral_radius(mat))
    return worst, worst <= 1.0 + RADIUS_TOL


def reachable_error_radii(model: AgentModel, K: ArrayLike, eta: float, N: int, n_prime: int) -> list[float]:
    """Outer radii of the reachable error sets for ``k = 0 .. N-1``.

    Each set is a Minkowski sum of linear images of the ``eta`` ball, so
    ``sum ||M_s||_2 * eta`` bounds its radius. ``k = 0`` is the ball itself.
    """
    if n_prime > N or n_prime < 1:
        raise InvalidHorizon(f"need 1 <= n_prime <= N, got n_prime={n_prime}, N={N}")
    K = np.asarray(K, dtype=float)
    BK = model.B @ K
    pw = _powers(model.A + BK, N)
    radii = [float(eta)]
    for k in range(1, N):
        upper = k if k < n_prime else n_prime
        total = np.linalg.norm(pw[k], 2)
        for s in range(upper):
            total += np.linalg.norm(pw[k - 1 - s] @ BK, 2)
        radii.append(float(total * eta))
    return radii


def worst_error_radii(model: AgentModel, K: ArrayLike, eta: float, N: int, tau_bar: int) -> list[float]:
    """Element-wise max of :func:`reachable_error_radii` over ``n_prime = N - tau``."""
    rows = [reachable_error_radii(model, K, eta, N, N - tau) for tau in range(1, tau_bar + 1)]
    return [float(v) for v in np.max(np.array(rows), axis=0)]


def tightened_bounds(u_max: ArrayLike, K: ArrayLike, eta: float) -> NDArray[np.float64]:
    """Raw per-channel bounds ``u_max_r - eta * ||K_r||_2`` (may be non-positive)."""
    if eta < 0:
        raise ValueError("eta must be non-negative")
    K = np.atleast_2d(np.asarray(K, dtype=float))
    u_max = np.broadcast_to(np.asarray(u_max, dtype=float), (K.shape[0],))
    return u_max - eta * np.linalg.norm(K, axis=1)


def tighten_input_box(u_max: ArrayLike, K: ArrayLike, eta: float) -> NDArray[np.float64]:
    """Erode the box by the image of the error ball under ``K``.

    The support of ``K * ball(eta)`` along coordinate r is ``eta * ||K_r||``,
    so the erosion of a box is again a box.

    Raises:
        EmptyTightenedSet: if any resulting bound is not positive.
    """
    bounds = tightened_bounds(u_max, K, eta)
    if np.any(bounds <= 0):
        raise EmptyTightenedSet(bounds)
    return bounds


def terminal_value(S: ArrayLike, x_i: ArrayLike, neighbor_states, weights) -> float:
    x_i = np.asarray(x_i, dtype=float)
    S = np.asarray(S, dtype=float)
    total = 0.0
    for a, x_j in zip(weights, neighbor_states):
        x_j = np.asarray(x_j, dtype=float)
        if x_j.shape != x_i.shape:
            raise DimensionMismatch(f"neighbor state {x_j.shape} vs {x_i.shape}")
        total += a * float(x_i @ S @ (x_i - x_j))
    return total


def terminal_membership(
    spec: TerminalSpec,
    x_i: ArrayLike,
    neighbor_states,
    weights,
    *,
    tightened: bool = False,
    eta: float = 0.0,
) -> tuple[float, bool]:
    """Evaluate the terminal-set inequality for one agent.

    Returns ``(lhs, member)``. With ``tightened=True`` the level is reduced by
    the first-order bound ``eta * (2 lmax (|x_i| + max_j |x_j|) + lmax eta)``,
    which is sufficient for ``x_i + d`` to stay in the set for all ``|d| <= eta``.
    """
    x_i = np.asarray(x_i, dtype=float)
    if x_i.shape != (spec.S.shape[0],):
        raise DimensionMismatch(f"state has shape {x_i.shape}, S is {spec.S.shape}")
    weights = list(weights)
    neighbor_states = [np.asarray(x, dtype=float) for x in neighbor_states]
    if len(weights) != len(neighbor_states):
        raise DimensionMismatch("one weight per neighbor state required")
    lhs = terminal_value(spec.S, x_i, neighbor_states, weights)
    level = spec.level
    if tightened:
        lmax = spec.max_eig
        reach = np.linalg.norm(x_i) + max((np.linalg.norm(x) for x in neighbor_states), default=0.0)
        level -= eta * (2.0 * lmax * reach + lmax * eta)
    return lhs, bool(lhs <= level + MEMBER_TOL)


@dataclass
class FeasibilityCertificate:
    """Result of every offline check for one scenario."""

    gain_radii: list[tuple[float, float]]
    delay_horizon_max_radius: float
    delay_horizon_ok: bool
    error_set_radii: list[float]
    eta: float
    tightened_u_max: list[float]
    failures: list[str] = field(default_factory=list)

    @property
    def gain_ok(self) -> bool:
        return consensus_gain_ok(self.gain_radii)

    @property
    def error_sets_ok(self) -> bool:
        return all(r <= self.eta + RADIUS_TOL for r in self.error_set_radii)

    @property
    def tightened_ok(self) -> bool:
        return all(b > 0 for b in self.tightened_u_max)

    @property
    def passed(self) -> bool:
        return self.gain_ok and self.delay_horizon_ok and self.error_sets_ok and self.tightened_ok

    def report_lines(self) -> list[str]:
        fmt = lambda v: repr(float(v))  # noqa: E731
        lines = [
            "gain_eigenvalues = " + ", ".join(fmt(lam) for lam, _ in self.gain_radii),
            "gain_radii = " + ", ".join(fmt(r) for _, r in self.gain_radii),
            f"gain_ok = {str(self.gain_ok).lower()}",
            f"delay_horizon_max_radius = {fmt(self.delay_horizon_max_radius)}",
            f"delay_horizon_ok = {str(self.delay_horizon_ok).lower()}",
            "error_set_radii = " + ", ".join(fmt(r) for r in self.error_set_radii),
            f"eta = {fmt(self.eta)}",
            f"error_sets_ok = {str(self.error_sets_ok).lower()}",
            "tightened_u_max = " + ", ".join(fmt(b) for b in self.tightened_u_max),
            f"tightened_ok = {str(self.tightened_ok).lower()}",
            f"failures = {'; '.join(self.failures) if self.failures else 'none'}",
            f"pass = {str(self.passed).lower()}",
        ]
        return lines


def certify(
    model: AgentModel, topology: Topology, K: ArrayLike, N: int, tau_bar: int, eta: float
) -> FeasibilityCertificate:
    K = np.asarray(K, dtype=float)
    failures: list[str] = []
    radii = check_consensus_gain(model, topology, K)
    if not consensus_gain_ok(radii):
        failures.append("consensus gain: rho(A + lam B K) >= 1 for some nonzero lam")
    worst, ok = check_delay_horizon(model, K, N, tau_bar)
    if not ok:
        failures.append(f"delay horizon: max spectral radius {worst:.6g} > 1")
    err = worst_error_radii(model, K, eta, N, tau_bar)
    if any(r > eta + RADIUS_TOL for r in err):
        failures.append(f"error sets: max outer radius {max(err):.6g} exceeds eta {eta:.6g}")
    try:
        bounds = tighten_input_box(model.u_max, K, eta)
    except EmptyTightenedSet as exc:
        bounds = np.asarray(exc.bounds)
        failures.append(f"EmptyTightenedSet: {exc}")
    return FeasibilityCertificate(
        gain_radii=radii,
        delay_horizon_max_radius=worst,
        delay_horizon_ok=ok,
        error_set_radii=err,
        eta=float(eta),
        tightened_u_max=[float(b) for b in bounds],
        failures=failures,
    )

"""Homogeneous linear agent model ``x+ = A x + B u`` with an inf-norm input box."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DimensionMismatch, NotStabilizable

FEAS_TOL = 1e-9
RANK_TOL = 1e-8


def _as_matrix(value: ArrayLike, name: str) -> NDArray[np.float64]:
    arr = np.array(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2:
        raise DimensionMismatch(f"{name} must be a matrix, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class AgentModel:
    """Shared agent dynamics.

    Attributes:
        A: (n, n) state matrix.
        B: (n, m) input matrix.
        u_max: (m,) per-channel bound; the admissible set is ``|u_r| <= u_max[r]``.
    """

    A: NDArray[np.float64] = field(repr=False)
    B: NDArray[np.float64] = field(repr=False)
    u_max: NDArray[np.float64] = field(repr=False)

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = _as_matrix(self.B, "B")
        if A.shape[0] != A.shape[1]:
            raise DimensionMismatch(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise DimensionMismatch(f"B has {B.shape[0]} rows, A is {A.shape[0]}x{A.shape[0]}")
        u_max = np.broadcast_to(np.asarray(self.u_max, dtype=float), (B.shape[1],)).copy()
        if np.any(u_max <= 0):
            raise ValueError(f"u_max must be positive, got {u_max}")
        for arr in (A, B, u_max):
            arr.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "u_max", u_max)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def with_u_max(self, u_max) -> "AgentModel":
        return AgentModel(self.A, self.B, u_max)


def step(model: AgentModel, x: ArrayLike, u: ArrayLike) -> NDArray[np.float64]:
    """One nominal step ``A x + B u``."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (model.n,) or u.shape != (model.m,):
        raise DimensionMismatch(f"expected x{(model.n,)}, u{(model.m,)}; got {x.shape}, {u.shape}")
    return model.A @ x + model.B @ u


def input_admissible(model: AgentModel, u: ArrayLike, tol: float = FEAS_TOL) -> bool:
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.shape != (model.m,):
        raise DimensionMismatch(f"expected {model.m} inputs, got {u.shape}")
    return bool(np.all(np.abs(u) <= model.u_max + tol))


def uncontrollable_eigenvalues(A: ArrayLike, B: ArrayLike, tol: float = RANK_TOL) -> list[complex]:
    """Eigenvalues of A that fail the PBH rank test ``rank[A - lam I, B] = n``."""
    A = _as_matrix(A, "A")
    B = _as_matrix(B, "B")
    n = A.shape[0]
    bad = []
    for lam in np.linalg.eigvals(A):
        pencil = np.hstack([A - lam * np.eye(n), B.astype(complex)])
        sv = np.linalg.svd(pencil, compute_uv=False)
        rank = int(np.sum(sv > tol * max(1.0, sv[0])))
        if rank < n:
            bad.append(complex(lam))
    return bad


def is_stabilizable(A: ArrayLike, B: ArrayLike, tol: float = RANK_TOL) -> bool:
    return all(abs(lam) < 1.0 for lam in uncontrollable_eigenvalues(A, B, tol))


def require_stabilizable(model: AgentModel) -> None:
    bad = [lam for lam in uncontrollable_eigenvalues(model.A, model.B) if abs(lam) >= 1.0]
    if bad:
        raise NotStabilizable(f"uncontrollable modes outside the unit disc: {bad}")

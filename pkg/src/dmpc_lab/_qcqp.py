"""Box-constrained convex QCQP kernel.

Solves::

    min  u' Q u + q' u
    s.t. u' P_j u + r_j' u + s_j <= 0,   j = 0 .. nc-1
         lo <= u <= hi

with an augmented-Lagrangian outer loop on the quadratic constraints and a
projected-Newton inner loop on the box. All ``P_j`` and ``Q`` are assumed
symmetric positive semidefinite, ``Q`` positive definite.

Every function here is written in the numpy subset numba understands and is
compiled through :func:`dmpc_lab._accel.kernel`.
"""

from __future__ import annotations

import numpy as np

from ._accel import kernel

# status codes returned by solve_qcqp
CONVERGED = 0
MAX_OUTER = 1
STALLED = 2


@kernel
def _constraint_values(u, Pc, rc, sc):
    nc = sc.shape[0]
    g = np.empty(nc)
    for j in range(nc):
        g[j] = u @ (Pc[j] @ u) + rc[j] @ u + sc[j]
    return g


@kernel
def _al_value(u, Q, q, Pc, rc, sc, lam, rho):
    val = u @ (Q @ u) + q @ u
    g = _constraint_values(u, Pc, rc, sc)
    for j in range(g.shape[0]):
        z = lam[j] + rho * g[j]
        if z > 0.0:
            val += (z * z - lam[j] * lam[j]) / (2.0 * rho)
        else:
            val -= lam[j] * lam[j] / (2.0 * rho)
    return val


@kernel
def _al_grad_hess(u, Q, q, Pc, rc, sc, lam, rho):
    grad = 2.0 * (Q @ u) + q
    hess = 2.0 * Q.copy()
    for j in range(sc.shape[0]):
        Pu = Pc[j] @ u
        gj = u @ Pu + rc[j] @ u + sc[j]
        z = lam[j] + rho * gj
        if z > 0.0:
            dg = 2.0 * Pu + rc[j]
            grad += z * dg
            hess += rho * np.outer(dg, dg) + (2.0 * z) * Pc[j]
    return grad, hess


@kernel
def _project(u, lo, hi):
    return np.minimum(np.maximum(u, lo), hi)


@kernel
def _projected_newton(u, lo, hi, Q, q, Pc, rc, sc, lam, rho, tol, max_iter):
    """Minimize the augmented Lagrangian over the box from ``u``.

    Returns ``(u, iterations, final projected-gradient norm, stalled flag)``.
    The stopping test is relative to the gradient scale so it stays
    meaningful when the penalty grows.
    """
    nu = u.shape[0]
    u = _project(u, lo, hi)
    phi = _al_value(u, Q, q, Pc, rc, sc, lam, rho)
    pg_norm = np.inf
    it = 0
    stalled = False
    flat = 0
    while it < max_iter:
        grad, hess = _al_grad_hess(u, Q, q, Pc, rc, sc, lam, rho)
        pg = u - _project(u - grad, lo, hi)
        pg_norm = np.max(np.abs(pg))
        if pg_norm <= tol * (1.0 + np.max(np.abs(grad - 2.0 * (Q @ u) - q)) + np.max(np.abs(q))):
            break
        it += 1
        eps = min(1e-8 * (1.0 + np.max(np.abs(hi - lo))), pg_norm)
        free = np.ones(nu, dtype=np.bool_)
        for i in range(nu):
            if (u[i] <= lo[i] + eps and grad[i] > 0.0) or (u[i] >= hi[i] - eps and grad[i] < 0.0):
                free[i] = False
        d = np.zeros(nu)
        nfree = 0
        for i in range(nu):
            if free[i]:
                nfree += 1
        if nfree > 0:
            idx = np.empty(nfree, dtype=np.int64)
            c = 0
            for i in range(nu):
                if free[i]:
                    idx[c] = i
                    c += 1
            Hff = np.empty((nfree, nfree))
            gf = np.empty(nfree)
            for a in range(nfree):
                gf[a] = grad[idx[a]]
                for b in range(nfree):
                    Hff[a, b] = hess[idx[a], idx[b]]
            scale = 0.0
            for a in range(nfree):
                scale = max(scale, abs(Hff[a, a]))
            for a in range(nfree):
                Hff[a, a] += 1e-14 * scale
            df = np.linalg.solve(Hff, -gf)
            for a in range(nfree):
                d[idx[a]] = df[a]
        for i in range(nu):
            if not free[i]:
                h = hess[i, i]
                d[i] = -grad[i] / h if h > 0.0 else -grad[i]

        accepted = False
        alpha = 1.0
        for _ in range(60):
            trial = _project(u + alpha * d, lo, hi)
            pred = 0.0
            for i in range(nu):
                if free[i]:
                    pred += alpha * grad[i] * d[i]
                else:
                    pred += grad[i] * (trial[i] - u[i])
            phi_t = _al_value(trial, Q, q, Pc, rc, sc, lam, rho)
            if phi_t <= phi + 1e-4 * pred and pred < 0.0:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            # projected-gradient fallback along the steepest-descent arc
            hnorm = np.max(np.abs(hess)) * nu
            beta = 1.0 / hnorm if hnorm > 0.0 else 1.0
            for _ in range(60):
                trial = _project(u - beta * grad, lo, hi)
                phi_t = _al_value(trial, Q, q, Pc, rc, sc, lam, rho)
                if phi_t <= phi + 1e-4 * (grad @ (trial - u)) and grad @ (trial - u) < 0.0:
                    accepted = True
                    break
                beta *= 0.5
        if not accepted:
            stalled = True
            break
        # roundoff floor: several accepted steps without measurable decrease
        if phi - phi_t <= 1e-15 * (1.0 + abs(phi)):
            flat += 1
            if flat >= 5:
                u = trial
                stalled = True
                break
        else:
            flat = 0
        u = trial
        phi = phi_t
    return u, it, pg_norm, stalled


@kernel
def solve_qcqp(Q, q, Pc, rc, sc, lo, hi, u0, rho0, outer_tol, inner_tol, max_outer, max_inner):
    """Augmented-Lagrangian driver.

    Returns ``(u, lam, status, outer_iterations, inner_iterations, residual)``
    where ``residual`` is the largest positive constraint value at ``u``.
    """
    nc = sc.shape[0]
    lam = np.zeros(nc)
    rho = rho0
    u = _project(u0.copy(), lo, hi)
    prev = np.inf
    inner_total = 0
    status = MAX_OUTER
    outer = 0
    for outer in range(1, max_outer + 1):
        u, it, pg, stalled = _projected_newton(u, lo, hi, Q, q, Pc, rc, sc, lam, rho, inner_tol, max_inner)
        inner_total += it
        g = _constraint_values(u, Pc, rc, sc)
        res = 0.0
        for j in range(nc):
            res = max(res, abs(min(-g[j], lam[j] / rho)))
        for j in range(nc):
            lam[j] = max(0.0, lam[j] + rho * g[j])
        if res <= outer_tol:
            status = STALLED if stalled and pg > 1e-6 else CONVERGED
            break
        if res > 0.25 * prev and rho < 1e12:
            rho *= 10.0
        prev = res
    g = _constraint_values(u, Pc, rc, sc)
    viol = 0.0
    for j in range(nc):
        viol = max(viol, g[j])
    return u, lam, status, outer, inner_total, viol

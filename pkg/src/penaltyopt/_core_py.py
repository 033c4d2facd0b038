"""Pure-Python implementation of the hot kernels.

Mirrors ``_core.pyx`` function by function; used when the compiled
extension is unavailable or when ``PENALTYOPT_BACKEND=python``.
Objective kinds: 0 = quadratic ``(Q, c)`` with one component,
1 = dense logistic regression ``(A, y, reg)``.
"""
import math

import numpy as np

DIVERGENCE_NORM_SQ = 1e24


def project_row(kinds, P, Q, s, j, x):
    kind = kinds[j]
    if kind == 0:
        n = P[j]
        return x - (n @ x - s[j]) * n
    if kind == 1:
        n = P[j]
        viol = n @ x - s[j]
        if viol <= 0.0:
            return x.copy()
        return x - viol * n
    if kind == 2:
        diff = x - P[j]
        norm = math.sqrt(diff @ diff)
        if norm <= s[j]:
            return x.copy()
        return P[j] + (s[j] / norm) * diff
    if kind == 3:
        return np.minimum(np.maximum(x, P[j]), Q[j])
    if kind == 4:
        a = P[j]
        t = float(a @ x)
        z = math.copysign(math.floor(abs(t) + 0.5), t)
        return x - ((t - z) / s[j]) * a
    raise ValueError(f"unknown set kind {kind}")


def dykstra_packed(kinds, P, Q, s, x, q, tol, max_sweeps):
    """Returns ``(p, sweeps, residual, n_projections, converged)``; ``q`` is updated."""
    m = kinds.shape[0]
    cur = x - q.sum(axis=0)
    nproj = 0
    tol_sq = tol * tol
    resid = math.inf
    for sweep in range(1, max_sweeps + 1):
        moved = 0.0
        for j in range(m):
            y = cur + q[j]
            p = project_row(kinds, P, Q, s, j, y)
            nproj += 1
            q[j] = y - p
            step = p - cur
            moved = max(moved, float(step @ step))
            cur = p
        if moved <= tol_sq:
            worst = 0.0
            for j in range(m):
                r = cur - project_row(kinds, P, Q, s, j, cur)
                nproj += 1
                worst = max(worst, float(r @ r))
            resid = math.sqrt(worst)
            if worst <= tol_sq:
                return cur, sweep, resid, nproj, True
    return cur, max_sweeps, resid, nproj, False


def _sigmoid(t):
    if t >= 0:
        return 1.0 / (1.0 + math.exp(-t))
    e = math.exp(t)
    return e / (1.0 + e)


def component_grad(obj_kind, M, v, reg, i, x):
    if obj_kind == 0:
        return M @ x - v
    a = M[i]
    yi = v[i]
    coef = -yi * _sigmoid(-yi * float(a @ x))
    return coef * a + reg * x


def sgd_chunk(obj_kind, M, v, reg, kinds, P, Q, s, x, lam, alpha, L, k0, i_idx, j_idx):
    """Penalized SGD steps with ``w_k = alpha / (2 alpha (L + lam) + k)``.

    Updates ``x`` in place; returns the number of steps completed (fewer than
    requested only on divergence).
    """
    base = 2.0 * alpha * (L + lam)
    for t in range(i_idx.shape[0]):
        k = k0 + t
        g = component_grad(obj_kind, M, v, reg, i_idx[t], x)
        if lam != 0.0:
            g = g + lam * (x - project_row(kinds, P, Q, s, j_idx[t], x))
        x -= (alpha / (base + k)) * g
        if x @ x > DIVERGENCE_NORM_SQ or not np.isfinite(x).all():
            return t + 1
    return i_idx.shape[0]


def svrg_chunk(obj_kind, M, v, reg, kinds, P, Q, s, x, w, mu_w, lam, step, i_idx, j_idx):
    """SVRG inner steps against the anchor ``w`` with full gradient ``mu_w``."""
    for t in range(i_idx.shape[0]):
        i, j = i_idx[t], j_idx[t]
        g = component_grad(obj_kind, M, v, reg, i, x) - component_grad(obj_kind, M, v, reg, i, w)
        if lam != 0.0:
            gh = (x - project_row(kinds, P, Q, s, j, x)) - (w - project_row(kinds, P, Q, s, j, w))
            g = g + lam * gh
        x -= step * (g + mu_w)
        if x @ x > DIVERGENCE_NORM_SQ or not np.isfinite(x).all():
            return t + 1
    return i_idx.shape[0]


def saga_chunk(obj_kind, M, v, reg, kinds, P, Q, s, x, Tf, Th, avg_f, avg_h, lam, step, i_idx, j_idx):
    """SAGA steps with separate gradient tables for the ``f_i`` and ``h_j``."""
    n = Tf.shape[0]
    m = Th.shape[0]
    for t in range(i_idx.shape[0]):
        i, j = i_idx[t], j_idx[t]
        gf = component_grad(obj_kind, M, v, reg, i, x)
        g = gf - Tf[i] + avg_f
        avg_f += (gf - Tf[i]) / n
        Tf[i] = gf
        if lam != 0.0:
            gh = x - project_row(kinds, P, Q, s, j, x)
            g = g + lam * (gh - Th[j] + avg_h)
            avg_h += (gh - Th[j]) / m
            Th[j] = gh
        x -= step * g
        if x @ x > DIVERGENCE_NORM_SQ or not np.isfinite(x).all():
            return t + 1
    return i_idx.shape[0]

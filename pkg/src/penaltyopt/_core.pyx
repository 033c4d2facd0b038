# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; the reference semantics live in ``_core_py.py``."""
import numpy as np
from libc.math cimport sqrt, exp, floor, fabs, copysign, isfinite

cdef double DIVERGENCE_NORM_SQ = 1e24


cdef inline double _dot(const double[::1] a, const double[::1] b, Py_ssize_t d) noexcept nogil:
    cdef double acc = 0.0
    cdef Py_ssize_t t
    for t in range(d):
        acc += a[t] * b[t]
    return acc


cdef void _project(const Py_ssize_t[::1] kinds, const double[:, ::1] P, const double[:, ::1] Q,
                   const double[::1] s, Py_ssize_t j, const double[::1] x,
                   double[::1] out) noexcept nogil:
    cdef Py_ssize_t d = x.shape[0]
    cdef Py_ssize_t t
    cdef Py_ssize_t kind = kinds[j]
    cdef double acc, norm, scale, z, lo, hi
    if kind == 0 or kind == 1:
        acc = 0.0
        for t in range(d):
            acc += P[j, t] * x[t]
        acc -= s[j]
        if kind == 1 and acc <= 0.0:
            for t in range(d):
                out[t] = x[t]
            return
        for t in range(d):
            out[t] = x[t] - acc * P[j, t]
    elif kind == 2:
        acc = 0.0
        for t in range(d):
            acc += (x[t] - P[j, t]) * (x[t] - P[j, t])
        norm = sqrt(acc)
        if norm <= s[j]:
            for t in range(d):
                out[t] = x[t]
            return
        scale = s[j] / norm
        for t in range(d):
            out[t] = P[j, t] + scale * (x[t] - P[j, t])
    elif kind == 3:
        for t in range(d):
            lo = P[j, t]
            hi = Q[j, t]
            out[t] = lo if x[t] < lo else (hi if x[t] > hi else x[t])
    else:
        acc = 0.0
        for t in range(d):
            acc += P[j, t] * x[t]
        z = copysign(floor(fabs(acc) + 0.5), acc)
        scale = (acc - z) / s[j]
        for t in range(d):
            out[t] = x[t] - scale * P[j, t]


def project_row(const Py_ssize_t[::1] kinds, const double[:, ::1] P, const double[:, ::1] Q,
                const double[::1] s, Py_ssize_t j, const double[::1] x):
    out = np.empty(x.shape[0])
    cdef double[::1] ov = out
    _project(kinds, P, Q, s, j, x, ov)
    return out


def dykstra_packed(const Py_ssize_t[::1] kinds, const double[:, ::1] P, const double[:, ::1] Q,
                   const double[::1] s, const double[::1] x, double[:, ::1] q,
                   double tol, Py_ssize_t max_sweeps):
    cdef Py_ssize_t m = kinds.shape[0]
    cdef Py_ssize_t d = x.shape[0]
    cur_arr = np.empty(d)
    cdef double[::1] cur = cur_arr
    cdef double[::1] y = np.empty(d)
    cdef double[::1] p = np.empty(d)
    cdef Py_ssize_t j, t, sweep
    cdef long nproj = 0
    cdef double tol_sq = tol * tol
    cdef double moved, stepsq, diff, worst, r2
    cdef double resid = float("inf")
    cdef bint ok = False
    cdef Py_ssize_t done = max_sweeps
    with nogil:
        for t in range(d):
            cur[t] = x[t]
        for j in range(m):
            for t in range(d):
                cur[t] -= q[j, t]
        for sweep in range(1, max_sweeps + 1):
            moved = 0.0
            for j in range(m):
                for t in range(d):
                    y[t] = cur[t] + q[j, t]
                _project(kinds, P, Q, s, j, y, p)
                nproj += 1
                stepsq = 0.0
                for t in range(d):
                    q[j, t] = y[t] - p[t]
                    diff = p[t] - cur[t]
                    stepsq += diff * diff
                    cur[t] = p[t]
                if stepsq > moved:
                    moved = stepsq
            if moved <= tol_sq:
                worst = 0.0
                for j in range(m):
                    _project(kinds, P, Q, s, j, cur, p)
                    nproj += 1
                    r2 = 0.0
                    for t in range(d):
                        r2 += (cur[t] - p[t]) * (cur[t] - p[t])
                    if r2 > worst:
                        worst = r2
                resid = sqrt(worst)
                if worst <= tol_sq:
                    ok = True
                    done = sweep
                    break
    return cur_arr, done, resid, nproj, ok


cdef inline double _sigmoid(double t) noexcept nogil:
    cdef double e
    if t >= 0:
        return 1.0 / (1.0 + exp(-t))
    e = exp(t)
    return e / (1.0 + e)


cdef void _component_grad(int obj_kind, const double[:, ::1] M, const double[::1] v, double reg,
                          Py_ssize_t i, const double[::1] x, double[::1] g) noexcept nogil:
    cdef Py_ssize_t d = x.shape[0]
    cdef Py_ssize_t r, t
    cdef double acc, coef, yi
    if obj_kind == 0:
        for r in range(d):
            acc = 0.0
            for t in range(d):
                acc += M[r, t] * x[t]
            g[r] = acc - v[r]
    else:
        acc = 0.0
        for t in range(d):
            acc += M[i, t] * x[t]
        yi = v[i]
        coef = -yi * _sigmoid(-yi * acc)
        for t in range(d):
            g[t] = coef * M[i, t] + reg * x[t]


def component_grad(int obj_kind, const double[:, ::1] M, const double[::1] v, double reg,
                   Py_ssize_t i, const double[::1] x):
    out = np.empty(x.shape[0])
    cdef double[::1] ov = out
    _component_grad(obj_kind, M, v, reg, i, x, ov)
    return out


cdef inline bint _diverged(const double[::1] x) noexcept nogil:
    cdef double acc = 0.0
    cdef Py_ssize_t t
    for t in range(x.shape[0]):
        acc += x[t] * x[t]
    return not (acc <= DIVERGENCE_NORM_SQ)


def sgd_chunk(int obj_kind, const double[:, ::1] M, const double[::1] v, double reg,
              const Py_ssize_t[::1] kinds, const double[:, ::1] P, const double[:, ::1] Q,
              const double[::1] s, double[::1] x, double lam, double alpha, double L,
              long k0, const Py_ssize_t[::1] i_idx, const Py_ssize_t[::1] j_idx):
    cdef Py_ssize_t d = x.shape[0]
    cdef Py_ssize_t steps = i_idx.shape[0]
    cdef double[::1] g = np.empty(d)
    cdef double[::1] p = np.empty(d)
    cdef double base = 2.0 * alpha * (L + lam)
    cdef double w
    cdef Py_ssize_t it, t
    cdef Py_ssize_t done = steps
    with nogil:
        for it in range(steps):
            _component_grad(obj_kind, M, v, reg, i_idx[it], x, g)
            if lam != 0.0:
                _project(kinds, P, Q, s, j_idx[it], x, p)
                for t in range(d):
                    g[t] += lam * (x[t] - p[t])
            w = alpha / (base + (k0 + it))
            for t in range(d):
                x[t] -= w * g[t]
            if _diverged(x):
                done = it + 1
                break
    return done


def svrg_chunk(int obj_kind, const double[:, ::1] M, const double[::1] v, double reg,
               const Py_ssize_t[::1] kinds, const double[:, ::1] P, const double[:, ::1] Q,
               const double[::1] s, double[::1] x, const double[::1] w, const double[::1] mu_w,
               double lam, double step, const Py_ssize_t[::1] i_idx, const Py_ssize_t[::1] j_idx):
    cdef Py_ssize_t d = x.shape[0]
    cdef Py_ssize_t steps = i_idx.shape[0]
    cdef double[::1] gx = np.empty(d)
    cdef double[::1] gw = np.empty(d)
    cdef double[::1] px = np.empty(d)
    cdef double[::1] pw = np.empty(d)
    cdef Py_ssize_t it, t
    cdef Py_ssize_t done = steps
    with nogil:
        for it in range(steps):
            _component_grad(obj_kind, M, v, reg, i_idx[it], x, gx)
            _component_grad(obj_kind, M, v, reg, i_idx[it], w, gw)
            if lam != 0.0:
                _project(kinds, P, Q, s, j_idx[it], x, px)
                _project(kinds, P, Q, s, j_idx[it], w, pw)
                for t in range(d):
                    gx[t] = (gx[t] - gw[t]) + lam * ((x[t] - px[t]) - (w[t] - pw[t]))
            else:
                for t in range(d):
                    gx[t] = gx[t] - gw[t]
            for t in range(d):
                x[t] -= step * (gx[t] + mu_w[t])
            if _diverged(x):
                done = it + 1
                break
    return done


def saga_chunk(int obj_kind, const double[:, ::1] M, const double[::1] v, double reg,
               const Py_ssize_t[::1] kinds, const double[:, ::1] P, const double[:, ::1] Q,
               const double[::1] s, double[::1] x, double[:, ::1] Tf, double[:, ::1] Th,
               double[::1] avg_f, double[::1] avg_h, double lam, double step,
               const Py_ssize_t[::1] i_idx, const Py_ssize_t[::1] j_idx):
    cdef Py_ssize_t d = x.shape[0]
    cdef Py_ssize_t n = Tf.shape[0]
    cdef Py_ssize_t m = Th.shape[0]
    cdef Py_ssize_t steps = i_idx.shape[0]
    cdef double[::1] gf = np.empty(d)
    cdef double[::1] g = np.empty(d)
    cdef double[::1] p = np.empty(d)
    cdef double gh
    cdef Py_ssize_t it, t, i, j
    cdef Py_ssize_t done = steps
    with nogil:
        for it in range(steps):
            i = i_idx[it]
            j = j_idx[it]
            _component_grad(obj_kind, M, v, reg, i, x, gf)
            for t in range(d):
                g[t] = gf[t] - Tf[i, t] + avg_f[t]
                avg_f[t] += (gf[t] - Tf[i, t]) / n
                Tf[i, t] = gf[t]
            if lam != 0.0:
                _project(kinds, P, Q, s, j, x, p)
                for t in range(d):
                    gh = x[t] - p[t]
                    g[t] += lam * (gh - Th[j, t] + avg_h[t])
                    avg_h[t] += (gh - Th[j, t]) / m
                    Th[j, t] = gh
            for t in range(d):
                x[t] -= step * g[t]
            if _diverged(x):
                done = it + 1
                break
    return done

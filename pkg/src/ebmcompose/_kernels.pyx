# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled chain kernels; the hot sequential loops of the toolkit.

Same contracts as _kernels_py: all randomness pre-drawn by the caller, so
output is a deterministic function of the noise arrays and matches the pure
path bit for bit (built with -ffp-contract=off).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, isfinite, INFINITY

cnp.import_array()

BACKEND = "cython"


cdef double _gmm_eval(double[::1] logconst, double[:, ::1] means, double[::1] inv_var,
                      double* x, double* grad_out, double* a, Py_ssize_t K,
                      Py_ssize_t D) noexcept nogil:
    cdef Py_ssize_t k, d
    cdef double ss, diff, ak, amax, z, g
    amax = -INFINITY
    for k in range(K):
        ss = 0.0
        for d in range(D):
            diff = x[d] - means[k, d]
            ss += diff * diff
        ak = logconst[k] - 0.5 * inv_var[k] * ss
        a[k] = ak
        if ak > amax:
            amax = ak
    z = 0.0
    for k in range(K):
        a[k] = exp(a[k] - amax)
        z += a[k]
    for d in range(D):
        g = 0.0
        for k in range(K):
            g += (a[k] / z) * inv_var[k] * (x[d] - means[k, d])
        grad_out[d] = g
    return -(amax + log(z))


def gmm_langevin_chain(double[::1] logconst, double[:, ::1] means, double[::1] inv_var,
                       double[::1] x0, double step, double noise_coef, double inv_temp,
                       double[:, ::1] normals):
    cdef Py_ssize_t n_steps = normals.shape[0]
    cdef Py_ssize_t D = normals.shape[1]
    cdef Py_ssize_t K = logconst.shape[0]
    out_arr = np.empty((n_steps, D))
    cdef double[:, ::1] out = out_arr
    x_buf = np.array(x0, dtype=np.float64)
    g_buf = np.zeros(D)
    a_buf = np.zeros(K)
    cdef double[::1] xv = x_buf
    cdef double[::1] gv = g_buf
    cdef double[::1] av = a_buf
    cdef double* x = &xv[0]
    cdef double* g = &gv[0]
    cdef double* a = &av[0]
    cdef Py_ssize_t i, d
    with nogil:
        for i in range(n_steps):
            _gmm_eval(logconst, means, inv_var, x, g, a, K, D)
            for d in range(D):
                x[d] = x[d] - step * inv_temp * g[d] + noise_coef * normals[i, d]
                out[i, d] = x[d]
    return out_arr


def gmm_mala_chain(double[::1] logconst, double[:, ::1] means, double[::1] inv_var,
                   double[::1] x0, double step, double noise_coef, double inv_temp,
                   double[:, ::1] normals, double[::1] uniforms):
    cdef Py_ssize_t n_steps = normals.shape[0]
    cdef Py_ssize_t D = normals.shape[1]
    cdef Py_ssize_t K = logconst.shape[0]
    out_arr = np.empty((n_steps, D))
    cdef double[:, ::1] out = out_arr
    bufs = np.zeros((4, D))
    a_buf = np.zeros(K)
    cdef double[:, ::1] bv = bufs
    cdef double[::1] av = a_buf
    cdef double* x = &bv[0, 0]
    cdef double* y = &bv[1, 0]
    cdef double* gx = &bv[2, 0]
    cdef double* gy = &bv[3, 0]
    cdef double* a = &av[0]
    cdef Py_ssize_t i, d
    cdef double ex, ey, fwd, rev, back, dlog
    cdef double half_inv_nc2 = 0.5 / (noise_coef * noise_coef)
    cdef long n_accept = 0
    for d in range(D):
        x[d] = x0[d]
    with nogil:
        ex = _gmm_eval(logconst, means, inv_var, x, gx, a, K, D)
        for i in range(n_steps):
            fwd = 0.0
            for d in range(D):
                y[d] = x[d] - step * inv_temp * gx[d] + noise_coef * normals[i, d]
                fwd += normals[i, d] * normals[i, d]
            ey = _gmm_eval(logconst, means, inv_var, y, gy, a, K, D)
            rev = 0.0
            for d in range(D):
                back = x[d] - (y[d] - step * inv_temp * gy[d])
                rev += back * back
            dlog = (ex - ey) * inv_temp - rev * half_inv_nc2 + 0.5 * fwd
            if dlog >= 0.0 or uniforms[i] < exp(dlog):
                n_accept += 1
                for d in range(D):
                    x[d] = y[d]
                    gx[d] = gy[d]
                ex = ey
            for d in range(D):
                out[i, d] = x[d]
    return out_arr, n_accept


def gmm_hmc_chain(double[::1] logconst, double[:, ::1] means, double[::1] inv_var,
                  double[::1] x0, double eps, long n_leapfrog, double inv_temp,
                  double[:, ::1] momenta, double[::1] uniforms, bint accept_always):
    cdef Py_ssize_t n_steps = momenta.shape[0]
    cdef Py_ssize_t D = momenta.shape[1]
    cdef Py_ssize_t K = logconst.shape[0]
    out_arr = np.empty((n_steps, D))
    cdef double[:, ::1] out = out_arr
    bufs = np.zeros((4, D))
    a_buf = np.zeros(K)
    cdef double[:, ::1] bv = bufs
    cdef double[::1] av = a_buf
    cdef double* x = &bv[0, 0]
    cdef double* xp = &bv[1, 0]
    cdef double* g = &bv[2, 0]
    cdef double* p = &bv[3, 0]
    cdef double* a = &av[0]
    cdef Py_ssize_t i, d
    cdef long l
    cdef double ex, e, h0, h1, dh
    cdef long n_accept = 0
    cdef long n_divergent = 0
    for d in range(D):
        x[d] = x0[d]
    with nogil:
        ex = _gmm_eval(logconst, means, inv_var, x, g, a, K, D)
        for i in range(n_steps):
            h0 = ex * inv_temp
            for d in range(D):
                p[d] = momenta[i, d]
                h0 += 0.5 * p[d] * p[d]
                xp[d] = x[d]
            e = ex
            _gmm_eval(logconst, means, inv_var, xp, g, a, K, D)
            for d in range(D):
                p[d] -= 0.5 * eps * inv_temp * g[d]
            for l in range(n_leapfrog):
                for d in range(D):
                    xp[d] += eps * p[d]
                e = _gmm_eval(logconst, means, inv_var, xp, g, a, K, D)
                if l < n_leapfrog - 1:
                    for d in range(D):
                        p[d] -= eps * inv_temp * g[d]
            h1 = e * inv_temp
            for d in range(D):
                p[d] -= 0.5 * eps * inv_temp * g[d]
                h1 += 0.5 * p[d] * p[d]
            dh = h0 - h1
            if not isfinite(dh):
                n_divergent += 1
            elif accept_always or dh >= 0.0 or uniforms[i] < exp(dh):
                n_accept += 1
                for d in range(D):
                    x[d] = xp[d]
                ex = e
            for d in range(D):
                out[i, d] = x[d]
    return out_arr, n_accept, n_divergent


def tab_mh_chain(double[::1] cdf, double[::1] e2, long idx0,
                 double[::1] u_prop, double[::1] u_acc):
    cdef Py_ssize_t n = u_prop.shape[0]
    cdef Py_ssize_t S = cdf.shape[0]
    out_arr = np.empty(n, dtype=np.int64)
    cdef long[::1] out = out_arr
    cdef Py_ssize_t i, lo, hi, mid, j
    cdef long cur = idx0
    cdef long n_accept = 0
    cdef double u, d
    with nogil:
        for i in range(n):
            u = u_prop[i]
            lo = 0
            hi = S
            while lo < hi:
                mid = (lo + hi) // 2
                if u < cdf[mid]:
                    hi = mid
                else:
                    lo = mid + 1
            j = lo if lo < S else S - 1
            d = e2[cur] - e2[j]
            if d >= 0.0 or u_acc[i] < exp(d):
                cur = j
                n_accept += 1
            out[i] = cur
    return out_arr, n_accept


def tab_gibbs_chain(double[::1] energy, long[::1] cards, long[::1] strides,
                    long[::1] x0, double[:, ::1] uniforms):
    cdef Py_ssize_t n_sweeps = uniforms.shape[0]
    cdef Py_ssize_t L = uniforms.shape[1]
    cdef Py_ssize_t i, v
    cdef long k, st, s_idx
    cdef long kmax = 0
    for i in range(L):
        if cards[i] > kmax:
            kmax = cards[i]
    out_arr = np.empty(n_sweeps, dtype=np.int64)
    cdef long[::1] out = out_arr
    x_buf = np.array(x0, dtype=np.int64)
    w_buf = np.zeros(kmax)
    cdef long[::1] x = x_buf
    cdef double[::1] w = w_buf
    cdef long flat = 0
    cdef long base, sweep
    cdef double emin, tot, r, ev
    for i in range(L):
        flat += x[i] * strides[i]
    with nogil:
        for sweep in range(n_sweeps):
            for i in range(L):
                k = cards[i]
                st = strides[i]
                base = flat - x[i] * st
                emin = INFINITY
                for v in range(k):
                    ev = energy[base + v * st]
                    if ev < emin:
                        emin = ev
                tot = 0.0
                for v in range(k):
                    tot += exp(-(energy[base + v * st] - emin))
                    w[v] = tot
                r = uniforms[sweep, i] * tot
                v = 0
                while v < k - 1 and w[v] <= r:
                    v += 1
                x[i] = v
                flat = base + v * st
            out[sweep] = flat
    return out_arr

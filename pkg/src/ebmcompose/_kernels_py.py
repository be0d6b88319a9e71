"""Pure-Python chain kernels; arithmetic mirrors _kernels.pyx step for step.

These are the fallback when the compiled extension is unavailable.  All
randomness is pre-drawn by the caller so a chain is a deterministic function
of its noise arrays, and the compiled and pure paths produce identical
output (the extension is built with FP contraction off for this reason).
"""

from __future__ import annotations

import math

import numpy as np

BACKEND = "python"


def _gmm_eval(logconst, means, inv_var, x, grad_out):
    """Energy and gradient of a normalized isotropic GMM at one point.

    Returns the energy; writes the gradient into ``grad_out``.  Naive
    sequential accumulation, matching the C kernel exactly.
    """
    K = len(logconst)
    D = len(x)
    a = [0.0] * K
    amax = -math.inf
    for k in range(K):
        ss = 0.0
        mk = means[k]
        for d in range(D):
            diff = x[d] - mk[d]
            ss += diff * diff
        ak = logconst[k] - 0.5 * inv_var[k] * ss
        a[k] = ak
        if ak > amax:
            amax = ak
    z = 0.0
    for k in range(K):
        a[k] = math.exp(a[k] - amax)
        z += a[k]
    for d in range(D):
        g = 0.0
        for k in range(K):
            g += (a[k] / z) * inv_var[k] * (x[d] - means[k][d])
        grad_out[d] = g
    return -(amax + math.log(z))


def gmm_langevin_chain(logconst, means, inv_var, x0, step, noise_coef, inv_temp, normals):
    """x' = x - step * inv_temp * grad E(x) + noise_coef * xi, recorded each step."""
    n_steps, D = normals.shape
    x = [float(v) for v in x0]
    g = [0.0] * D
    out = np.empty((n_steps, D))
    means_l = [list(map(float, m)) for m in means]
    logconst_l = list(map(float, logconst))
    inv_var_l = list(map(float, inv_var))
    for i in range(n_steps):
        _gmm_eval(logconst_l, means_l, inv_var_l, x, g)
        for d in range(D):
            x[d] = x[d] - step * inv_temp * g[d] + noise_coef * normals[i, d]
        out[i] = x
    return out


def gmm_mala_chain(
    logconst, means, inv_var, x0, step, noise_coef, inv_temp, normals, uniforms
):
    """Langevin proposal with Metropolis correction; exact for exp(-E/T)."""
    n_steps, D = normals.shape
    x = [float(v) for v in x0]
    y = [0.0] * D
    gx = [0.0] * D
    gy = [0.0] * D
    means_l = [list(map(float, m)) for m in means]
    logconst_l = list(map(float, logconst))
    inv_var_l = list(map(float, inv_var))
    out = np.empty((n_steps, D))
    ex = _gmm_eval(logconst_l, means_l, inv_var_l, x, gx)
    n_accept = 0
    half_inv_nc2 = 0.5 / (noise_coef * noise_coef)
    for i in range(n_steps):
        fwd = 0.0
        for d in range(D):
            y[d] = x[d] - step * inv_temp * gx[d] + noise_coef * normals[i, d]
            fwd += normals[i, d] * normals[i, d]
        ey = _gmm_eval(logconst_l, means_l, inv_var_l, y, gy)
        rev = 0.0
        for d in range(D):
            back = x[d] - (y[d] - step * inv_temp * gy[d])
            rev += back * back
        dlog = (ex - ey) * inv_temp - rev * half_inv_nc2 + 0.5 * fwd
        if dlog >= 0.0 or uniforms[i] < math.exp(dlog):
            n_accept += 1
            for d in range(D):
                x[d] = y[d]
                gx[d] = gy[d]
            ex = ey
        out[i] = x
    return out, n_accept


def gmm_hmc_chain(
    logconst, means, inv_var, x0, eps, n_leapfrog, inv_temp, momenta, uniforms, accept_always
):
    """Leapfrog HMC (or U-HMC when accept_always) with unit mass matrix."""
    n_steps, D = momenta.shape
    x = [float(v) for v in x0]
    xp = [0.0] * D
    g = [0.0] * D
    p = [0.0] * D
    means_l = [list(map(float, m)) for m in means]
    logconst_l = list(map(float, logconst))
    inv_var_l = list(map(float, inv_var))
    out = np.empty((n_steps, D))
    ex = _gmm_eval(logconst_l, means_l, inv_var_l, x, g)
    n_accept = 0
    n_divergent = 0
    for i in range(n_steps):
        h0 = ex * inv_temp
        for d in range(D):
            p[d] = momenta[i, d]
            h0 += 0.5 * p[d] * p[d]
            xp[d] = x[d]
        e = ex
        _gmm_eval(logconst_l, means_l, inv_var_l, xp, g)
        for d in range(D):
            p[d] -= 0.5 * eps * inv_temp * g[d]
        for l in range(n_leapfrog):
            for d in range(D):
                xp[d] += eps * p[d]
            e = _gmm_eval(logconst_l, means_l, inv_var_l, xp, g)
            if l < n_leapfrog - 1:
                for d in range(D):
                    p[d] -= eps * inv_temp * g[d]
        h1 = e * inv_temp
        for d in range(D):
            p[d] -= 0.5 * eps * inv_temp * g[d]
            h1 += 0.5 * p[d] * p[d]
        dh = h0 - h1
        if not math.isfinite(dh):
            n_divergent += 1
        elif accept_always or dh >= 0.0 or uniforms[i] < math.exp(dh):
            n_accept += 1
            for d in range(D):
                x[d] = xp[d]
            ex = e
        out[i] = x
    return out, n_accept, n_divergent


def tab_mh_chain(cdf, e2, idx0, u_prop, u_acc):
    """Independence Metropolis-Hastings on a finite state space.

    Proposals are inverse-CDF draws from the table behind ``cdf``; acceptance
    is clip(exp(E2(cur) - E2(prop)), 0, 1).  Returns the state index after
    every step plus the accept count.
    """
    n = len(u_prop)
    S = len(cdf)
    out = np.empty(n, dtype=np.int64)
    cur = int(idx0)
    n_accept = 0
    for i in range(n):
        u = u_prop[i]
        lo, hi = 0, S
        while lo < hi:
            mid = (lo + hi) // 2
            if u < cdf[mid]:
                hi = mid
            else:
                lo = mid + 1
        j = lo if lo < S else S - 1
        d = e2[cur] - e2[j]
        if d >= 0.0 or u_acc[i] < math.exp(d):
            cur = j
            n_accept += 1
        out[i] = cur
    return out, n_accept


def tab_gibbs_chain(energy, cards, strides, x0, uniforms):
    """Fixed-order Gibbs sweeps on a tabular energy.

    ``energy`` is the flat table, ``cards``/``strides`` the per-dimension
    cardinalities and flat-index strides.  Returns the flat state index after
    each sweep.
    """
    n_sweeps, L = uniforms.shape
    x = [int(v) for v in x0]
    kmax = max(int(c) for c in cards)
    w = [0.0] * kmax
    out = np.empty(n_sweeps, dtype=np.int64)
    flat = 0
    for i in range(L):
        flat += x[i] * strides[i]
    for s in range(n_sweeps):
        for i in range(L):
            k = int(cards[i])
            st = int(strides[i])
            base = flat - x[i] * st
            emin = math.inf
            for v in range(k):
                ev = energy[base + v * st]
                if ev < emin:
                    emin = ev
            tot = 0.0
            for v in range(k):
                tot += math.exp(-(energy[base + v * st] - emin))
                w[v] = tot
            r = uniforms[s, i] * tot
            v = 0
            while v < k - 1 and w[v] <= r:
                v += 1
            x[i] = v
            flat = base + v * st
        out[s] = flat
    return out

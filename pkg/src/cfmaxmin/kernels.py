"""Compiled inner loops for the ADMM iterations.

The numpy routines in :mod:`cones` and :mod:`lifting` are the reference
implementations; these kernels fuse the same arithmetic into single passes so
that the per-iteration cost is not dominated by interpreter overhead.  Tests
compare the two routes.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .cones import MEMBER_TOL

# reassociation and contraction only; inf/nan must survive for divergence checks
_FAST = {"nsz", "arcp", "contract", "reassoc"}


@njit(cache=True, fastmath=_FAST)
def wstep_dual(tau, b, lam, w, lam_scale, mix_d, mix_w, wscale, dual_step,
               num_soc, soc_dim, radii, power_dim, project_only, c):
    """w <- prox (or projection) at the mixed point, then lam <- lam + dual_step * r.

    The mixed point is mix_d * (tau + b + lam_scale * lam) + mix_w * w and
    ``c`` is a scratch vector of the same length.  Returns f at the new w
    (zero when ``project_only``) and ||tau + b - w_new||.
    """
    q = 0.0 if project_only else wscale / (1.0 + wscale)
    L = tau.size
    for i in range(L):
        c[i] = mix_d * (tau[i] + b[i] + lam_scale * lam[i]) + mix_w * w[i]
    fw = 0.0
    for k in range(num_soc):
        o = k * soc_dim
        e = o + soc_dim - 1
        nr2 = 0.0
        for i in range(o, e):
            nr2 += c[i] * c[i]
        nr = math.sqrt(nr2)
        last = c[e]
        if nr <= last + MEMBER_TOL * (1.0 + math.hypot(nr, last)):
            continue  # inside: prox and projection are the identity
        a = 0.5 * (1.0 + last / nr) if nr > 0.0 else 0.0
        a = min(max(a, 0.0), 1.0)
        plast = a * nr
        g2 = 0.0
        for i in range(o, e):
            g = (1.0 - a) * c[i]
            g2 += g * g
            c[i] = a * c[i] + q * g
        g = last - plast
        g2 += g * g
        c[e] = plast + q * g
        fw += 0.5 * q * q * g2
    base = num_soc * soc_dim
    for m in range(radii.size):
        o = base + m * power_dim
        n2 = 0.0
        for i in range(o, o + power_dim):
            n2 += c[i] * c[i]
        nrm = math.sqrt(n2)
        if nrm <= radii[m] * (1.0 + MEMBER_TOL):
            continue
        s = radii[m] / nrm
        g2 = 0.0
        for i in range(o, o + power_dim):
            g = (1.0 - s) * c[i]
            g2 += g * g
            c[i] = s * c[i] + q * g
        fw += 0.5 * q * q * g2
    res = 0.0
    for i in range(L):
        r = tau[i] + b[i] - c[i]
        w[i] = c[i]
        lam[i] += dual_step * r
        res += r * r
    return fw, math.sqrt(res)


@njit(cache=True, fastmath=_FAST)
def full_vstep(V, tau, b, w, lam, inv_beta, hbar, hbar_t, htilde, cap_inv_hbar_t, shift,
               u_rows, gamma, e_sc, sqrt_e, M, N, soc_dim, include_power):
    """Closed-form update of every block, then tau = A V from scratch.

    Returns ||V_new - V_old||.
    """
    K, D = V.shape
    K2 = 2 * K
    MN = M * N
    soc_size = K * soc_dim
    P = np.empty((K, K2))
    for k in range(K):
        o = k * soc_dim
        for col in range(K2):
            r = o + col  # entry (k, j=col//2, c=col%2) of the pair rows
            P[col // 2, 2 * k + (col % 2)] = b[r] - w[r] + inv_beta * lam[r]
    X = np.dot(P, hbar_t)
    for j in range(K):
        r = j * soc_dim + K2 + 1
        g = sqrt_e * (b[r] - w[r] + inv_beta * lam[r])
        for d in range(D):
            X[j, d] += g * htilde[j, d]
    if include_power:
        for m in range(M):
            for j in range(K):
                for c in range(2):
                    for n in range(N):
                        r = soc_size + m * K2 * N + j * 2 * N + c * N + n
                        X[j, c * MN + m * N + n] += b[r] - w[r] + inv_beta * lam[r]
    Z = np.dot(np.dot(X, hbar), cap_inv_hbar_t)
    ch2 = 0.0
    for j in range(K):
        dot = 0.0
        for d in range(D):
            X[j, d] = (X[j, d] - Z[j, d]) / shift
            dot += X[j, d] * htilde[j, d]
        coef = e_sc * dot / (1.0 + e_sc * gamma[j])
        for d in range(D):
            vn = coef * u_rows[j, d] - X[j, d]
            diff = vn - V[j, d]
            ch2 += diff * diff
            V[j, d] = vn
    Y = np.dot(V, hbar)  # Y[j, 2k+c] = (H~_k v_j)_c
    for k in range(K):
        o = k * soc_dim
        for col in range(K2):
            tau[o + col] = Y[col // 2, 2 * k + (col % 2)]
        tau[o + K2] = 0.0
        tau[o + K2 + 1] = sqrt_e * Y[k, 2 * k]
    if include_power:
        for m in range(M):
            for j in range(K):
                for c in range(2):
                    for n in range(N):
                        tau[soc_size + m * K2 * N + j * 2 * N + c * N + n] = V[j, c * MN + m * N + n]
    return math.sqrt(ch2)


@njit(cache=True, fastmath=_FAST)
def subset_vstep(idx, V, tau, b, w, lam, inv_beta, hbar, hbar_t, htilde, cap_inv_hbar_t, shift,
                 u_rows, gamma, e_sc, sqrt_e, M, N, soc_dim, include_power, last_change):
    """Closed-form update of the blocks in ``idx`` with incremental tau.

    Each selected block solves (A_j^T A_j) v_j = -A_j^T (b - w + lam/beta)
    on its mask rows, and tau gains A_j (v_j_new - v_j_old).  Returns the
    Euclidean norm of the combined block change.
    """
    s = idx.size
    if s == 0:
        return 0.0
    K, D = V.shape
    K2 = 2 * K
    MN = M * N
    soc_size = K * soc_dim
    P = np.empty((s, K2))
    for q in range(s):
        j = idx[q]
        for k in range(K):
            for c in range(2):
                r = k * soc_dim + 2 * j + c
                P[q, 2 * k + c] = b[r] - w[r] + inv_beta * lam[r]
    X = np.dot(P, hbar_t)
    for q in range(s):
        j = idx[q]
        r = j * soc_dim + K2 + 1
        g = sqrt_e * (b[r] - w[r] + inv_beta * lam[r])
        for d in range(D):
            X[q, d] += g * htilde[j, d]
        if include_power:
            for m in range(M):
                for c in range(2):
                    for n in range(N):
                        r = soc_size + m * K2 * N + j * 2 * N + c * N + n
                        X[q, c * MN + m * N + n] += b[r] - w[r] + inv_beta * lam[r]
    Z = np.dot(np.dot(X, hbar), cap_inv_hbar_t)
    total = 0.0
    for q in range(s):
        j = idx[q]
        dot = 0.0
        for d in range(D):
            X[q, d] = (X[q, d] - Z[q, d]) / shift
            dot += X[q, d] * htilde[j, d]
        coef = e_sc * dot / (1.0 + e_sc * gamma[j])
        ch2 = 0.0
        for d in range(D):
            vn = coef * u_rows[j, d] - X[q, d]
            X[q, d] = vn - V[j, d]  # block change
            V[j, d] = vn
            ch2 += X[q, d] * X[q, d]
        last_change[j] = math.sqrt(ch2)
        total += ch2
    Y = np.dot(X, hbar)
    for q in range(s):
        j = idx[q]
        for k in range(K):
            for c in range(2):
                tau[k * soc_dim + 2 * j + c] += Y[q, 2 * k + c]
        tau[j * soc_dim + K2 + 1] += sqrt_e * Y[q, 2 * j]
        if include_power:
            for m in range(M):
                for c in range(2):
                    for n in range(N):
                        tau[soc_size + m * K2 * N + j * 2 * N + c * N + n] += X[q, c * MN + m * N + n]
    return math.sqrt(total)


@njit(cache=True)
def run_chunk(n, randomized, draws, opg_tol, skip_first, final_chunk, qos, out,
              V, tau, b, w, lam, inv_beta, hbar, hbar_t, htilde, cap_inv_hbar_t, shift,
              u_rows, gamma, e_sc, sqrt_e, M, N, soc_dim, include_power, last_change,
              lam_scale, mix_d, mix_w, wscale, dual_step, num_soc, radii, power_dim, scratch):
    """Run up to ``n`` iterations in place.

    ``out[i]`` receives (f, opg, primal residual, updated blocks) of
    iteration i.  The iteration that stops the run (tolerance met, or the
    last one of the final chunk) skips its w/dual step and leaves f and the
    residual as nan for the caller to fill.  Returns (iterations run,
    status) with status 1 = converged, 0 = ran out, -1 = non-finite.
    """
    K = V.shape[0]
    all_idx = np.arange(K)
    for i in range(n):
        if randomized:
            cnt = 0
            for k in range(K):
                if draws[i, k]:
                    cnt += 1
            idx = np.empty(cnt, dtype=np.int64)
            cnt = 0
            for k in range(K):
                if draws[i, k]:
                    idx[cnt] = k
                    cnt += 1
            opg = subset_vstep(idx, V, tau, b, w, lam, inv_beta, hbar, hbar_t, htilde,
                               cap_inv_hbar_t, shift, u_rows, gamma, e_sc, sqrt_e, M, N,
                               soc_dim, include_power, last_change)
            acc = 0.0
            for k in range(K):
                acc += last_change[k] * last_change[k]
            opg_stop = math.sqrt(acc)
            nupd = cnt
        else:
            opg = full_vstep(V, tau, b, w, lam, inv_beta, hbar, hbar_t, htilde, cap_inv_hbar_t,
                             shift, u_rows, gamma, e_sc, sqrt_e, M, N, soc_dim, include_power)
            opg_stop = opg
            nupd = K
        out[i, 1] = opg
        out[i, 3] = nupd
        if not math.isfinite(opg):
            return i + 1, -1
        converged = opg_stop <= opg_tol and not (skip_first and i == 0)
        if converged or (final_chunk and i == n - 1):
            out[i, 0] = np.nan
            out[i, 2] = np.nan
            return i + 1, 1 if converged else 0
        fw, res = wstep_dual(tau, b, lam, w, lam_scale, mix_d, mix_w, wscale, dual_step,
                             num_soc, soc_dim, radii, power_dim, qos, scratch)
        if qos:
            fw = 0.0
            for j in range(K):
                for d in range(V.shape[1]):
                    fw += V[j, d] * V[j, d]
        out[i, 0] = fw
        out[i, 2] = res
        if not (math.isfinite(fw) and math.isfinite(res)):
            return i + 1, -1
    return n, 0

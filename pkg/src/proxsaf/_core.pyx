# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled adaptation loop (hot kernel).

Implements the contract documented in ``proxsaf._core_py`` (the pure
Python fallback); the two must stay behaviorally identical.  Weights
are kept reversed internally so every per-frame dot product walks the
padded subband signals forward in memory.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, isfinite

BACKEND_NAME = "compiled"
DIVERGENCE_LIMIT = 1e12


cdef inline void _gains(int rule_kind, double zeta, double epsilon,
                        double rho, double gamma,
                        double[::1] w, double[::1] g, Py_ssize_t m) noexcept:
    cdef Py_ssize_t j
    cdef double s = 0.0, mx = 0.0, a, floor_q
    if rule_kind == 0:
        for j in range(m):
            g[j] = 1.0 / m
        return
    if rule_kind == 1:
        for j in range(m):
            s += fabs(w[j])
        for j in range(m):
            g[j] = (1.0 - zeta) / (2.0 * m) + (1.0 + zeta) * fabs(w[j]) / (2.0 * s + epsilon)
        return
    # pnlms
    for j in range(m):
        a = fabs(w[j])
        if a > mx:
            mx = a
    floor_q = rho * (gamma if gamma > mx else mx)
    s = 0.0
    for j in range(m):
        a = fabs(w[j])
        g[j] = floor_q if floor_q > a else a
        s += g[j]
    for j in range(m):
        g[j] /= s


def run_adaptation(
    double[:, ::1] sub_u_padded,
    double[:, ::1] sub_d,
    double[::1] wo_pre,
    double[::1] wo_post,
    Py_ssize_t change_frame,
    double mu,
    double beta,
    double delta,
    int rule_kind,
    double zeta,
    double epsilon,
    double rho,
    double gamma,
    bint auto_beta,
    double tau,
    Py_ssize_t tracker_period,
    full_u_padded=None,
    full_d=None,
    Py_ssize_t ss_start=-1,
    Py_ssize_t adapt_start=0,
):
    cdef Py_ssize_t n_bands = sub_u_padded.shape[0]
    cdef Py_ssize_t num_frames = sub_d.shape[0]
    cdef Py_ssize_t m = wo_pre.shape[0]
    if sub_u_padded.shape[1] != num_frames * n_bands + m - 1:
        raise ValueError("sub_u_padded length inconsistent with frame count")
    if rule_kind not in (0, 1, 2):
        raise ValueError(f"unknown rule kind {rule_kind}")
    if tracker_period < 1:
        raise ValueError("tracker_period must be >= 1")

    cdef bint want_aec = full_u_padded is not None
    cdef double[::1] fu
    cdef double[::1] fd
    if want_aec:
        fu = full_u_padded
        fd = full_d

    # reversed-index copies: element j corresponds to natural index m-1-j
    wo_pre_r = np.ascontiguousarray(np.asarray(wo_pre)[::-1])
    wo_post_r = np.ascontiguousarray(np.asarray(wo_post)[::-1])
    cdef double[::1] wopr = wo_pre_r
    cdef double[::1] wpor = wo_post_r

    msd_arr = np.full(num_frames, np.nan)
    beta_arr = np.full(num_frames, np.nan)
    e_full_arr = np.full(num_frames * n_bands, np.nan) if want_aec else None
    gain_sum_arr = np.zeros(m)
    werr2_sum_arr = np.zeros(m)
    cdef double[::1] msd = msd_arr
    cdef double[::1] beta_trace = beta_arr
    cdef double[::1] e_full
    if want_aec:
        e_full = e_full_arr
    cdef double[::1] gain_sum = gain_sum_arr
    cdef double[::1] werr2_sum = werr2_sum_arr

    w_arr = np.zeros(m)
    psi_arr = np.zeros(m)
    g_arr = np.zeros(m)
    what_arr = np.zeros(m)
    upd_arr = np.zeros(m)
    err_arr = np.zeros(n_bands)
    cdef double[::1] w = w_arr
    cdef double[::1] psi = psi_arr
    cdef double[::1] g = g_arr
    cdef double[::1] what = what_arr
    cdef double[::1] upd = upd_arr
    cdef double[::1] err = err_arr

    cdef Py_ssize_t ss_count = 0
    cdef bint diverged = False
    cdef Py_ssize_t diverged_at = -1
    cdef Py_ssize_t k, i, j, nk, n, sample
    cdef double dev, acc, denom, scale, cur_beta, thr, a
    cdef double psi_l1, what_l1, nnz, beta_k
    cdef double[::1] wo_r
    cdef bint ok

    cur_beta = beta
    for k in range(num_frames):
        wo_r = wopr if k < change_frame else wpor
        acc = 0.0
        for j in range(m):
            dev = w[j] - wo_r[j]
            acc += dev * dev
        msd[k] = acc
        if not isfinite(acc) or acc > DIVERGENCE_LIMIT:
            diverged = True
            diverged_at = k
            break

        nk = (k + 1) * n_bands - 1
        if want_aec:
            for i in range(n_bands):
                sample = k * n_bands + i
                acc = 0.0
                for j in range(m):
                    acc += fu[sample + j] * w[j]
                e_full[sample] = fd[sample] - acc

        if k < adapt_start:
            beta_trace[k] = cur_beta
            continue

        _gains(rule_kind, zeta, epsilon, rho, gamma, w, g, m)

        # forward step: accumulate the innovation in upd
        for j in range(m):
            upd[j] = 0.0
        for i in range(n_bands):
            acc = 0.0
            denom = delta
            for j in range(m):
                a = sub_u_padded[i, nk + j]
                acc += a * w[j]
                denom += g[j] * a * a
            err[i] = sub_d[k, i] - acc
            scale = mu * err[i] / denom
            for j in range(m):
                upd[j] += scale * sub_u_padded[i, nk + j]
        ok = True
        for j in range(m):
            psi[j] = w[j] + upd[j] * g[j]
            if not isfinite(psi[j]):
                ok = False
        if not ok:
            diverged = True
            diverged_at = k
            break

        if auto_beta:
            # tracker cadence counts performed updates, not held frames
            if (k - adapt_start) % tracker_period == 0:
                for j in range(m):
                    what[j] = psi[j]
            else:
                for j in range(m):
                    what[j] = 0.5 * what[j] + 0.5 * psi[j]
            psi_l1 = 0.0
            what_l1 = 0.0
            nnz = 0.0
            for j in range(m):
                psi_l1 += fabs(psi[j])
                what_l1 += fabs(what[j])
                if psi[j] != 0.0:
                    nnz += 1.0
            if nnz == 0.0:
                cur_beta = 0.0
            else:
                beta_k = psi_l1 - what_l1
                if beta_k < tau:
                    beta_k = tau
                cur_beta = beta_k / nnz

        # auto mode adapts the proximal index itself; fixed mode scales by mu
        thr = cur_beta if auto_beta else mu * cur_beta
        if thr == 0.0:
            for j in range(m):
                w[j] = psi[j]
        else:
            for j in range(m):
                a = fabs(psi[j]) - thr
                if a > 0.0:
                    w[j] = a if psi[j] > 0.0 else -a
                else:
                    w[j] = 0.0
        beta_trace[k] = cur_beta

        if 0 <= ss_start <= k:
            for j in range(m):
                gain_sum[j] += g[j]
                dev = w[j] - wo_r[j]
                werr2_sum[j] += dev * dev
            ss_count += 1

    return {
        "msd": msd_arr,
        "weights": w_arr[::-1].copy(),
        "diverged": bool(diverged),
        "diverged_at": int(diverged_at),
        "e_full": e_full_arr,
        "beta_trace": beta_arr,
        "ss_gain_sum": gain_sum_arr[::-1].copy(),
        "ss_werr2_sum": werr2_sum_arr[::-1].copy(),
        "ss_count": int(ss_count),
    }

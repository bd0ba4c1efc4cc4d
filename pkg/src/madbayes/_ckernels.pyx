# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled solver inner loops; see ``_pykernels`` for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY

cnp.import_array()

cdef double NULL_TOL = 1e-8


def kfeatures_rows(X, A, Z, int row_cap, double tol):
    cdef double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef double[:, ::1] Av = np.ascontiguousarray(A, dtype=np.float64)
    Zout = np.array(Z, dtype=np.int8, copy=True, order="C")
    cdef cnp.int8_t[:, ::1] Zv = Zout
    cdef Py_ssize_t N = Zv.shape[0], K = Zv.shape[1], D = Xv.shape[1]
    if K == 0:
        return Zout, False
    cdef double[:, ::1] G = np.ascontiguousarray(np.asarray(Av) @ np.asarray(Av).T)
    cdef double[:, ::1] Bx = np.ascontiguousarray(np.asarray(Xv) @ np.asarray(Av).T)
    cdef double[::1] s = np.zeros(K)
    cdef int[::1] zc = np.zeros(K, dtype=np.int32)
    cdef Py_ssize_t n, k, j, i
    cdef long long code, gray, prev_gray, total, best_code, cur_code
    cdef double val, best_val, cur_val, delta, sign
    cdef bint changed = False, improved
    if K > row_cap:
        for n in range(N):
            for k in range(K):
                s[k] = 0.0
                for j in range(K):
                    s[k] += G[k, j] * Zv[n, j]
            improved = True
            while improved:
                improved = False
                for k in range(K):
                    if Zv[n, k]:
                        delta = 2.0 * Bx[n, k] - 2.0 * s[k] + G[k, k]
                    else:
                        delta = -2.0 * Bx[n, k] + 2.0 * s[k] + G[k, k]
                    if delta < -tol:
                        sign = -1.0 if Zv[n, k] else 1.0
                        Zv[n, k] = 1 - Zv[n, k]
                        for j in range(K):
                            s[j] += sign * G[j, k]
                        improved = True
                        changed = True
        return Zout, bool(changed)
    total = 1LL << K
    for n in range(N):
        # current row value
        cur_code = 0
        cur_val = 0.0
        for k in range(K):
            if Zv[n, k]:
                cur_code |= 1LL << k
                cur_val -= 2.0 * Bx[n, k]
                for j in range(K):
                    if Zv[n, j]:
                        cur_val += G[k, j]
        # Gray-code walk; s[k] = sum_{j in code} G[k, j]
        for k in range(K):
            s[k] = 0.0
            zc[k] = 0
        val = 0.0
        best_val = 0.0
        best_code = 0
        prev_gray = 0
        for code in range(1, total):
            gray = code ^ (code >> 1)
            k = 0
            while not ((gray ^ prev_gray) >> k) & 1:
                k += 1
            prev_gray = gray
            if zc[k]:
                val += 2.0 * Bx[n, k] - 2.0 * s[k] + G[k, k]
                zc[k] = 0
                for j in range(K):
                    s[j] -= G[j, k]
            else:
                val += -2.0 * Bx[n, k] + 2.0 * s[k] + G[k, k]
                zc[k] = 1
                for j in range(K):
                    s[j] += G[j, k]
            if val < best_val or (val == best_val and gray < best_code):
                best_val = val
                best_code = gray
        if best_val < cur_val - tol:
            changed = True
            for k in range(K):
                Zv[n, k] = (best_code >> k) & 1
    return Zout, bool(changed)


def bp_row_update(x, cnp.int8_t[::1] z, A, cnp.int64_t[::1] colsum, double lambda2, double tol):
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, ::1] Av = np.ascontiguousarray(A, dtype=np.float64)
    cdef Py_ssize_t K = z.shape[0], D = xv.shape[0], k, d
    cdef double[::1] r = np.empty(D)
    cdef double aa, ra, delta, rr
    cdef bint changed = False
    for d in range(D):
        r[d] = xv[d]
    for k in range(K):
        if z[k]:
            for d in range(D):
                r[d] -= Av[k, d]
    for k in range(K):
        aa = 0.0
        ra = 0.0
        for d in range(D):
            aa += Av[k, d] * Av[k, d]
            ra += r[d] * Av[k, d]
        if z[k]:
            delta = 2.0 * ra + aa
            if colsum[k] == 1:
                delta -= lambda2
        else:
            delta = -2.0 * ra + aa
            if colsum[k] == 0:
                delta += lambda2
        if delta < -tol:
            if z[k]:
                z[k] = 0
                colsum[k] -= 1
                for d in range(D):
                    r[d] += Av[k, d]
            else:
                z[k] = 1
                colsum[k] += 1
                for d in range(D):
                    r[d] -= Av[k, d]
            changed = True
    rr = 0.0
    for d in range(D):
        rr += r[d] * r[d]
    return bool(changed), rr


def projection_fits(G, B, double xx):
    cdef double[:, :, ::1] Gv = np.ascontiguousarray(G, dtype=np.float64)
    cdef double[:, :, ::1] Bv = np.ascontiguousarray(B, dtype=np.float64)
    cdef Py_ssize_t C = Gv.shape[0], K = Gv.shape[1], D = Bv.shape[2]
    out = np.empty(C)
    cdef double[::1] ov = out
    cdef double[:, ::1] L = np.zeros((K, K))
    cdef double[:, ::1] Y = np.zeros((K, D))
    cdef cnp.uint8_t[::1] keep = np.zeros(K, dtype=np.uint8)
    cdef Py_ssize_t c, k, j, i, d
    cdef double piv, dk, q, acc, scale
    for c in range(C):
        q = 0.0
        for k in range(K):
            keep[k] = 0
            piv = Gv[c, k, k]
            for i in range(k):
                if keep[i]:
                    piv -= L[k, i] * L[k, i]
            scale = Gv[c, k, k] if Gv[c, k, k] > 1.0 else 1.0
            if piv <= 1e-9 * scale:
                continue
            dk = sqrt(piv)
            L[k, k] = dk
            keep[k] = 1
            for j in range(k + 1, K):
                acc = Gv[c, j, k]
                for i in range(k):
                    if keep[i]:
                        acc -= L[j, i] * L[k, i]
                L[j, k] = acc / dk
            for d in range(D):
                acc = Bv[c, k, d]
                for i in range(k):
                    if keep[i]:
                        acc -= L[k, i] * Y[i, d]
                Y[k, d] = acc / dk
                q += Y[k, d] * Y[k, d]
        ov[c] = xx - q
    return out


def dp_means_sweep(X, M, cnp.int64_t[::1] labels, Py_ssize_t K, double lambda2):
    cdef double[:, ::1] Xv = X
    cdef double[:, ::1] Mv = M
    cdef Py_ssize_t N = Xv.shape[0], D = Xv.shape[1], n, k, d, kb
    cdef double dist, best, diff
    cdef bint changed = False
    for n in range(N):
        best = INFINITY
        kb = 0
        for k in range(K):
            dist = 0.0
            for d in range(D):
                diff = Mv[k, d] - Xv[n, d]
                dist += diff * diff
            if dist < best:
                best = dist
                kb = k
        if best > lambda2:
            for d in range(D):
                Mv[K, d] = Xv[n, d]
            kb = K
            K += 1
        if labels[n] != kb:
            labels[n] = kb
            changed = True
    return K, bool(changed)


def collapsed_dp_sweep(X, cnp.int64_t[::1] labels, sums, cnp.int64_t[::1] counts,
                       Py_ssize_t K, double lambda2, double tol):
    cdef double[:, ::1] Xv = X
    cdef double[:, ::1] S = sums
    cdef Py_ssize_t N = Xv.shape[0], D = Xv.shape[1], n, k, d, k0, kb, last, m
    cdef double c0, best, cost, cnt, diff, dist
    cdef bint changed = False
    for n in range(N):
        k0 = labels[n]
        for d in range(D):
            S[k0, d] -= Xv[n, d]
        counts[k0] -= 1
        best = INFINITY
        kb = -1
        c0 = lambda2
        for k in range(K):
            if counts[k] == 0:
                continue
            cnt = <double> counts[k]
            dist = 0.0
            for d in range(D):
                diff = Xv[n, d] - S[k, d] / cnt
                dist += diff * diff
            cost = cnt / (cnt + 1.0) * dist
            if k == k0:
                c0 = cost
            if cost < best:
                best = cost
                kb = k
        if best > lambda2:
            best = lambda2
            kb = -1
        if best < c0 - tol and kb != k0:
            changed = True
            if kb == -1:
                if counts[k0] == 0:
                    kb = k0
                else:
                    kb = K
                    K += 1
                    for d in range(D):
                        S[kb, d] = 0.0
                    counts[kb] = 0
            labels[n] = kb
        else:
            kb = k0
        for d in range(D):
            S[kb, d] += Xv[n, d]
        counts[kb] += 1
        if counts[k0] == 0:
            last = K - 1
            if k0 != last:
                for d in range(D):
                    S[k0, d] = S[last, d]
                counts[k0] = counts[last]
                for m in range(N):
                    if labels[m] == last:
                        labels[m] = k0
            K -= 1
    return K, bool(changed)


def collapsed_row_search(Gp, Q, nul, x, Py_ssize_t[::1] group,
                         cnp.int64_t[::1] group_size, cnp.int8_t[::1] group_nonzero,
                         double rest_fit, double exact_fit, double lambda2, long long cur_code):
    cdef double[:, ::1] Gv = np.ascontiguousarray(Gp, dtype=np.float64)
    cdef double[:, ::1] Qv = np.ascontiguousarray(Q, dtype=np.float64)
    cdef double[:, ::1] Nv = np.ascontiguousarray(nul, dtype=np.float64)
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t K = group.shape[0], D = xv.shape[0], m = Nv.shape[1]
    cdef Py_ssize_t G = group_size.shape[0], k, j, d, g
    cdef double[::1] h = np.zeros(K)
    cdef double[::1] q = np.zeros(D)
    cdef double[::1] t = np.zeros(max(m, 1))
    cdef long long[::1] ones = np.zeros(max(G, 1), dtype=np.int64)
    cdef int[::1] zc = np.zeros(K, dtype=np.int32)
    cdef double xx = 0.0, s = 0.0, sign, qx, qq, v, fit, val, best_val, cur_val
    cdef long long code, gray, prev_gray = 0, best_code = 0, total = 1LL << K
    cdef long long distinct = 0
    cdef bint hit
    for d in range(D):
        xx += xv[d] * xv[d]
    # the empty row: no gain, no memberships
    for g in range(G):
        if group_nonzero[g]:
            distinct += 1
    fit = rest_fit if rest_fit > 0.0 else 0.0
    best_val = fit + distinct * lambda2
    cur_val = best_val
    for code in range(1, total):
        gray = code ^ (code >> 1)
        k = 0
        while not ((gray ^ prev_gray) >> k) & 1:
            k += 1
        prev_gray = gray
        sign = -1.0 if zc[k] else 1.0
        zc[k] = 1 - zc[k]
        g = group[k]
        # distinct-count contribution of group g before and after the flip
        distinct -= (ones[g] > 0) + (ones[g] < group_size[g] and group_nonzero[g])
        ones[g] += 1 if sign > 0 else -1
        distinct += (ones[g] > 0) + (ones[g] < group_size[g] and group_nonzero[g])
        s += 2.0 * sign * h[k] + Gv[k, k]
        for j in range(K):
            h[j] += sign * Gv[j, k]
        for d in range(D):
            q[d] += sign * Qv[k, d]
        hit = False
        for j in range(m):
            t[j] += sign * Nv[k, j]
            if t[j] > NULL_TOL or t[j] < -NULL_TOL:
                hit = True
        if hit:
            fit = exact_fit
        else:
            qx = 0.0
            qq = 0.0
            for d in range(D):
                qx += q[d] * xv[d]
                v = q[d] + s * xv[d]
                qq += v * v
            fit = rest_fit - (2.0 * qx + s * xx - qq / (1.0 + s))
        if fit < 0.0:
            fit = 0.0
        val = fit + distinct * lambda2
        if val < best_val or (val == best_val and gray < best_code):
            best_val = val
            best_code = gray
        if gray == cur_code:
            cur_val = val
    return best_code, best_val, cur_val

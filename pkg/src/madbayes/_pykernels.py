"""Pure NumPy versions of the solver inner loops.

Signatures and tie-breaking mirror ``_ckernels.pyx`` exactly; the two are
checked against each other in the test suite.
"""

import numpy as np

_CHUNK = 4096
NULL_TOL = 1e-8


def _codes(K, start, stop):
    c = np.arange(start, stop, dtype=np.int64)
    return ((c[:, None] >> np.arange(K)) & 1).astype(float)


def kfeatures_rows(X, A, Z, row_cap, tol):
    """Best binary row ``z`` for every data row given means ``A``.

    Exhaustive over all ``2**K`` rows when ``K <= row_cap``, greedy
    coordinate descent otherwise.  The current row is kept unless some
    other row beats it by more than ``tol``; exact ties go to the lowest
    code (bit ``k`` = ``z_k``).  Returns ``(Z_new, changed)``.
    """
    X = np.ascontiguousarray(X, dtype=float)
    A = np.ascontiguousarray(A, dtype=float)
    Z = np.array(Z, dtype=np.int8, copy=True)
    N, K = Z.shape
    if K == 0:
        return Z, False
    G = A @ A.T
    Bx = X @ A.T
    changed = False
    if K > row_cap:
        for n in range(N):
            if _greedy_row(Z[n], Bx[n], G, tol):
                changed = True
        return Z, changed
    weights = 1 << np.arange(K, dtype=np.int64)
    cur_code = Z.astype(np.int64) @ weights
    best_val = np.full(N, np.inf)
    best_code = np.zeros(N, dtype=np.int64)
    for start in range(0, 1 << K, _CHUNK):
        stop = min(1 << K, start + _CHUNK)
        C = _codes(K, start, stop)
        quad = np.einsum("ck,kj,cj->c", C, G, C)
        vals = quad[None, :] - 2.0 * Bx @ C.T
        idx = np.argmin(vals, axis=1)
        v = vals[np.arange(N), idx]
        better = v < best_val
        best_val[better] = v[better]
        best_code[better] = start + idx[better]
    zc = ((cur_code[:, None] >> np.arange(K)) & 1).astype(float)
    cur_val = np.einsum("nk,kj,nj->n", zc, G, zc) - 2.0 * np.sum(Bx * zc, axis=1)
    move = best_val < cur_val - tol
    if np.any(move):
        changed = True
        rows = np.flatnonzero(move)
        Z[rows] = ((best_code[rows, None] >> np.arange(K)) & 1).astype(np.int8)
    return Z, changed


def _greedy_row(z, b, G, tol):
    K = z.size
    s = G @ z.astype(float)
    changed = False
    improved = True
    while improved:
        improved = False
        for k in range(K):
            if z[k]:
                delta = 2.0 * b[k] - 2.0 * s[k] + G[k, k]
            else:
                delta = -2.0 * b[k] + 2.0 * s[k] + G[k, k]
            if delta < -tol:
                sign = -1.0 if z[k] else 1.0
                z[k] = 1 - z[k]
                s += sign * G[:, k]
                improved = changed = True
    return changed


def bp_row_update(x, z, A, colsum, lambda2, tol):
    """Sequentially set each ``z_k`` of one row to its better value.

    The objective change of a flip includes the ``lambda2`` penalty of a
    column becoming empty or non-empty.  ``z`` and ``colsum`` are updated
    in place.  Returns ``(changed, residual_sq)``.
    """
    r = np.array(x, dtype=float) - z.astype(float) @ A
    changed = False
    for k in range(z.size):
        a = A[k]
        aa = float(a @ a)
        ra = float(r @ a)
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
                r += a
            else:
                z[k] = 1
                colsum[k] += 1
                r -= a
            changed = True
    return changed, float(r @ r)


def projection_fits(G, B, xx):
    """Residual ``xx - tr(B' G^+ B)`` for a stack of Gram matrices.

    ``G`` has shape ``(C, K, K)`` and ``B`` shape ``(C, K, D)``; dependent
    columns are skipped by the pivoted Cholesky, which yields the
    orthogonal projection on the column space.
    """
    G = np.asarray(G, dtype=float)
    B = np.asarray(B, dtype=float)
    C, K, _ = G.shape
    out = np.empty(C)
    for c in range(C):
        out[c] = xx - _skip_cholesky_quad(G[c], B[c])
    return out


def _skip_cholesky_quad(G, B):
    K = G.shape[0]
    L = np.zeros((K, K))
    keep = np.zeros(K, dtype=bool)
    Y = np.zeros_like(B)
    q = 0.0
    for k in range(K):
        kept = np.flatnonzero(keep[:k])
        lk = L[k, kept]
        piv = G[k, k] - float(lk @ lk)
        if piv <= 1e-9 * max(G[k, k], 1.0):
            continue
        d = np.sqrt(piv)
        L[k, k] = d
        keep[k] = True
        for j in range(k + 1, K):
            L[j, k] = (G[j, k] - float(L[j, kept] @ lk)) / d
        Y[k] = (B[k] - lk @ Y[kept]) / d
        q += float(Y[k] @ Y[k])
    return q


def dp_means_sweep(X, M, labels, K, lambda2):
    """One assignment pass of DP-means over rows in order.

    ``M`` is a buffer with room for ``N`` extra centers; the first ``K``
    rows are live.  A point farther than ``lambda2`` (squared) from every
    center opens a new center at itself.  Returns ``(K, changed)``.
    """
    changed = False
    for n in range(X.shape[0]):
        d = np.sum((M[:K] - X[n]) ** 2, axis=1)
        k = int(np.argmin(d))
        if d[k] > lambda2:
            M[K] = X[n]
            k = K
            K += 1
        if labels[n] != k:
            labels[n] = k
            changed = True
    return K, changed


def collapsed_dp_sweep(X, labels, sums, counts, K, lambda2, tol):
    """One pass of the collapsed DP-means reassignment.

    Each point is taken out of its cluster and placed where the increase
    ``s/(s+1) |x - mean|^2`` is smallest, or in a new singleton at cost
    ``lambda2``.  It stays put unless a move lowers the objective by more
    than ``tol``.  An emptied cluster is replaced by the last live one.
    Returns ``(K, changed)``.
    """
    changed = False
    for n in range(X.shape[0]):
        x = X[n]
        k0 = labels[n]
        sums[k0] -= x
        counts[k0] -= 1
        cnt = counts[:K].astype(float)
        cost = np.full(K, np.inf)
        live = cnt > 0
        diff = x - sums[:K][live] / cnt[live, None]
        cost[live] = cnt[live] / (cnt[live] + 1.0) * np.sum(diff * diff, axis=1)
        c0 = cost[k0] if counts[k0] > 0 else lambda2
        kb = int(np.argmin(cost))
        if cost[kb] > lambda2:
            best, kb = lambda2, -1
        else:
            best = cost[kb]
        if best < c0 - tol and kb != k0:
            changed = True
            if kb == -1:
                if counts[k0] == 0:
                    kb = k0
                else:
                    kb = K
                    K += 1
                    sums[kb] = 0.0
                    counts[kb] = 0
            labels[n] = kb
        else:
            kb = k0
        sums[kb] += x
        counts[kb] += 1
        if counts[k0] == 0:
            last = K - 1
            if k0 != last:
                sums[k0] = sums[last]
                counts[k0] = counts[last]
                labels[labels == last] = k0
            K -= 1
    return K, changed


def collapsed_row_search(Gp, Q, nul, x, group, group_size, group_nonzero,
                         rest_fit, exact_fit, lambda2, cur_code):
    """Best membership code for one row under the collapsed BP-means objective.

    With the row removed, ``Gp`` is the pseudo-inverse of the Gram matrix
    of the columns, ``Q = Gp B`` the projected cross-products and ``nul``
    a null-space basis of the columns (``K x m``).  A candidate ``z`` that
    is not orthogonal to ``nul`` puts the row's unit vector in the span,
    so the fit is ``exact_fit``; otherwise a rank-one update of the
    projection gives it.  The penalty counts distinct non-empty columns
    using the grouping of columns that agree off this row.

    Returns ``(best_code, best_val, cur_val)``; ties go to the lowest code.
    """
    K = group.shape[0]
    xx = float(x @ x)
    best_code, best_val, cur_val = 0, np.inf, np.inf
    onehot = np.zeros((K, group_size.shape[0]))
    onehot[np.arange(K), group] = 1.0
    total = 1 << K
    for start in range(0, total, _CHUNK):
        codes = np.arange(start, min(total, start + _CHUNK), dtype=np.int64)
        Zc = ((codes[:, None] >> np.arange(K)) & 1).astype(float)
        s = np.einsum("ij,jk,ik->i", Zc, Gp, Zc)
        q = Zc @ Q
        gain = 2.0 * (q @ x) + s * xx - np.sum((q + s[:, None] * x) ** 2, axis=1) / (1.0 + s)
        fit = rest_fit - gain
        if nul.shape[1]:
            hit = np.max(np.abs(Zc @ nul), axis=1) > NULL_TOL
            fit = np.where(hit, exact_fit, fit)
        ones = Zc @ onehot
        distinct = np.sum(ones > 0, axis=1) + np.sum((ones < group_size) & (group_nonzero > 0), axis=1)
        vals = np.maximum(fit, 0.0) + distinct * lambda2
        i = int(np.argmin(vals))
        if vals[i] < best_val:
            best_val, best_code = float(vals[i]), int(codes[i])
        if start <= cur_code < start + len(codes):
            cur_val = float(vals[cur_code - start])
    return best_code, best_val, cur_val

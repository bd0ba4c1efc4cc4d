"""Coordinate-descent solvers, ++-style initialization and restarts.

Every solver records the objective of its starting configuration and of
the configuration after each full iteration in ``SolveResult.history``.
Solvers that take ``seed=None`` start from a fixed deterministic
configuration; an integer seed (or ``numpy.random.Generator``) switches to
a randomized ++-style start, which is what restarts use.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
from scipy import linalg

from . import kernels
from .model import (
    Clustering,
    FeatureAllocation,
    MahalanobisParams,
    ObjectiveBreakdown,
    SolveResult,
    as_binary,
    as_data,
    canonicalize,
    canonicalize_pair,
    merge_duplicate_columns,
)
from .objectives import (
    collapsed_dp_objective,
    dp_means_objective,
    least_squares_means,
    mahalanobis_objective,
    projection_fit,
)

MEAN_TOL = 1e-12
GRAM_RANK_TOL = 1e-10


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 500
    change_tol: float = 1e-12
    restarts: int = 1
    base_seed: int = 0
    exhaustive_row_cap: int = 20
    threads: Optional[int] = 1

    def __post_init__(self):
        if self.max_iters < 1 or self.restarts < 1 or self.change_tol < 0:
            raise ValueError("need max_iters >= 1, restarts >= 1 and change_tol >= 0")


DEFAULT_CONFIG = SolverConfig()


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _seed_value(seed):
    return seed if isinstance(seed, (int, np.integer)) else None


def _sample_index(rng, weights):
    total = float(weights.sum())
    if not total > 0:
        return int(rng.integers(weights.size))
    return int(rng.choice(weights.size, p=weights / total))


def _labels_to_clustering(labels) -> Clustering:
    return Clustering.from_labels(labels)


def _aligned(labels, M):
    """Canonical clustering for ``labels`` and the rows of ``M`` in its column order."""
    C = Clustering.from_labels(labels)
    first = np.argmax(C.Z, axis=0)
    return C, M[np.asarray(labels)[first]]


def _cluster_means(X, C: Clustering) -> np.ndarray:
    Zf = C.Z.astype(float)
    return (Zf.T @ X) / Zf.sum(axis=0)[:, None]


# --------------------------------------------------------------------------
# initialization


def plusplus_init(X, mode: str = "feature", capK: Optional[int] = None, lambda2: Optional[float] = None, seed=None):
    """++-style starting configuration ``(Z, A)``.

    Feature mode starts from a base feature holding every row with the
    data mean, then repeatedly samples a row with probability proportional
    to its squared residual, uses that residual as the next feature mean,
    and sets that feature's memberships to whatever lowers each row's
    residual.  It stops at ``capK`` features or, when ``lambda2`` is
    given, as soon as another feature would not lower the BP-means
    objective, whichever comes first.

    Cluster mode is k-means++ seeding.  With ``capK`` it places ``capK``
    centers at data points.  With only ``lambda2`` it keeps sampling
    centers while the nearest-center partition, scored by the DP-means
    objective with centroid means, keeps improving, and returns those
    centroids.  Rows are assigned to their nearest center.

    When every residual is zero the next row is drawn uniformly.
    """
    X = as_data(X)
    N, D = X.shape
    if capK is None and lambda2 is None:
        raise ValueError("plusplus_init needs capK or lambda2")
    if capK is not None and capK < 1:
        raise ValueError("capK must be positive")
    rng = _rng(seed)
    if mode == "feature":
        return _plusplus_features(X, capK, lambda2, rng)
    if mode == "cluster":
        return _plusplus_clusters(X, capK, lambda2, rng)
    raise ValueError(f"mode must be 'feature' or 'cluster', got {mode!r}")


def _plusplus_features(X, capK, lambda2, rng):
    N, D = X.shape
    Z = np.ones((N, 1), dtype=np.int8)
    A = X.mean(axis=0, keepdims=True)
    R = X - A
    while capK is None or Z.shape[1] < capK:
        w = np.sum(R * R, axis=1)
        n = _sample_index(rng, w)
        a = R[n].copy()
        col = (2.0 * (R @ a) > a @ a).astype(np.int8)
        col[n] = 1
        R_new = R - col[:, None] * a
        if lambda2 is not None:
            gain = float(np.sum(R * R) - np.sum(R_new * R_new))
            if not gain > lambda2:
                break
        Z = np.hstack([Z, col[:, None]])
        A = np.vstack([A, a])
        R = R_new
        if Z.shape[1] >= 2 * N + 1:
            break
    return Z, A


def _nearest(X, M):
    dist = np.sum((X[:, None, :] - M[None, :, :]) ** 2, axis=2)
    return np.argmin(dist, axis=1)


def _partition_cost(X, labels, K, lambda2):
    cost = (K - 1) * lambda2
    for k in range(K):
        pts = X[labels == k]
        if len(pts):
            cost += float(np.sum((pts - pts.mean(axis=0)) ** 2))
    return cost


def _plusplus_clusters(X, capK, lambda2, rng):
    N, D = X.shape
    centers = [int(rng.integers(N))]
    d2 = np.sum((X - X[centers[0]]) ** 2, axis=1)
    limit = N if capK is None else min(capK, N)
    cost = None if capK is not None else _partition_cost(X, np.zeros(N, dtype=np.int64), 1, lambda2)
    while len(centers) < limit:
        n = _sample_index(rng, d2)
        if capK is None:
            # accept only if the induced partition, scored with its centroids, improves
            labels = _nearest(X, X[centers + [n]])
            new_cost = _partition_cost(X, labels, len(centers) + 1, lambda2)
            if not new_cost < cost:
                break
            cost = new_cost
        centers.append(n)
        d2 = np.minimum(d2, np.sum((X - X[n]) ** 2, axis=1))
    M = X[centers]
    labels = _nearest(X, M)
    Z = np.zeros((N, len(centers)), dtype=np.int8)
    Z[np.arange(N), labels] = 1
    keep = Z.sum(axis=0) > 0
    Z, M = Z[:, keep], M[keep]
    if capK is None:
        M = (Z.T.astype(float) @ X) / Z.sum(axis=0)[:, None]
    return canonicalize_pair(Z, M)


# --------------------------------------------------------------------------
# DP-means and collapsed DP-means


def dp_means(X, lambda2: float, cfg: SolverConfig = DEFAULT_CONFIG, seed=None, *, penalize_all: bool = False) -> SolveResult:
    """DP-means: points farther than ``lambda2`` from every center open a
    new cluster; means are reset to the empirical means after each sweep."""
    t0 = time.perf_counter()
    X = as_data(X)
    N, D = X.shape
    M = np.zeros((2 * N + 1, D))
    labels = np.zeros(N, dtype=np.int64)
    if seed is None:
        M[0] = X.mean(axis=0)
        K = 1
    else:
        Z0, A0 = plusplus_init(X, "cluster", lambda2=lambda2, seed=_rng(seed))
        K = Z0.shape[1]
        M[:K] = A0
        labels[:] = np.argmax(Z0, axis=1)

    def objective():
        C, means = _aligned(labels, M)
        return dp_means_objective(X, C, means, lambda2, penalize_all=penalize_all).total

    history = [objective()]
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        old_labels = labels.copy()
        old_K = K
        old_M = M[:K].copy()
        K, _ = kernels.dp_means_sweep(X, M, labels, K, lambda2)
        used, labels[:] = np.unique(labels, return_inverse=True)
        K = used.size
        counts = np.bincount(labels, minlength=K).astype(float)
        new_M = np.zeros((K, D))
        np.add.at(new_M, labels, X)
        M[:K] = new_M / counts[:, None]
        history.append(objective())
        if K == old_K and np.array_equal(labels, old_labels) and np.max(np.abs(M[:K] - old_M)) <= MEAN_TOL:
            converged = True
            break
    C = _labels_to_clustering(labels)
    A = _cluster_means(X, C)
    br = dp_means_objective(X, C, A, lambda2, penalize_all=penalize_all)
    return SolveResult("dpmeans", C, A, br, it, converged, _seed_value(seed), lambda2, history,
                       1e3 * (time.perf_counter() - t0))


def collapsed_dp_means(X, lambda2: float, cfg: SolverConfig = DEFAULT_CONFIG, seed=None) -> SolveResult:
    """Collapsed DP-means: each point in turn leaves its cluster and joins
    the one whose empirical-mean objective grows least, or starts its own
    cluster when every such increase exceeds ``lambda2``."""
    t0 = time.perf_counter()
    X = as_data(X)
    N, D = X.shape
    if seed is None:
        labels = np.zeros(N, dtype=np.int64)
    else:
        Z0, _ = plusplus_init(X, "cluster", lambda2=lambda2, seed=_rng(seed))
        labels = np.argmax(Z0, axis=1).astype(np.int64)
    K = int(labels.max()) + 1
    sums = np.zeros((N + 1, D))
    np.add.at(sums, labels, X)
    counts = np.zeros(N + 1, dtype=np.int64)
    counts[:K] = np.bincount(labels, minlength=K)

    def objective():
        return collapsed_dp_objective(X, _labels_to_clustering(labels), lambda2, check=False).total

    history = [objective()]
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        K, changed = kernels.collapsed_dp_sweep(X, labels, sums, counts, K, lambda2, cfg.change_tol)
        history.append(objective())
        if not changed:
            converged = True
            break
    C = _labels_to_clustering(labels)
    br = collapsed_dp_objective(X, C, lambda2)
    return SolveResult("collapsed-dp", C, None, br, it, converged, _seed_value(seed), lambda2, history,
                       1e3 * (time.perf_counter() - t0))


# --------------------------------------------------------------------------
# BP-means and collapsed BP-means


def _bp_total(X, Z, A, lambda2):
    nonempty = int(np.count_nonzero(Z.sum(axis=0)))
    R = X - Z.astype(float) @ A if Z.shape[1] else X
    return float(np.sum(R * R)) + nonempty * lambda2


def bp_means(X, lambda2: float, cfg: SolverConfig = DEFAULT_CONFIG, seed=None) -> SolveResult:
    """BP-means coordinate descent.

    Step 1 visits rows in order, greedily sets each membership against the
    current means, then offers the row a private new feature whose mean is
    its residual (kept only if the objective drops by more than
    ``cfg.change_tol``).  Step 2 merges identical features, drops empty
    ones, drops features in the span of the others and refits the means
    by least squares; features whose refit mean is zero are then removed.
    """
    t0 = time.perf_counter()
    X = as_data(X)
    N, D = X.shape
    tol = cfg.change_tol
    if seed is None:
        Z = np.zeros((N, 0), dtype=np.int8)
        A = np.zeros((0, D))
    else:
        rng = _rng(seed)
        Z, A = plusplus_init(X, "feature", capK=int(rng.integers(1, N + 1)), lambda2=lambda2, seed=rng)
        Zm, A = merge_duplicate_columns(Z, A)
        Z = Zm.Z.copy()
    history = [_bp_total(X, Z, A, lambda2)]
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        K = Z.shape[1]
        Zbuf = np.zeros((N, K + N), dtype=np.int8)
        Zbuf[:, :K] = Z
        Abuf = np.zeros((K + N, D))
        Abuf[:K] = A
        colsum = np.zeros(K + N, dtype=np.int64)
        colsum[:K] = Z.sum(axis=0)
        step1_changed = False
        for n in range(N):
            changed, rr = kernels.bp_row_update(X[n], Zbuf[n, :K], Abuf[:K], colsum[:K], lambda2, tol)
            if rr - lambda2 > tol:
                Abuf[K] = X[n] - Zbuf[n, :K].astype(float) @ Abuf[:K]
                Zbuf[n, K] = 1
                colsum[K] = 1
                K += 1
                changed = True
            step1_changed |= changed
        Zm, _ = merge_duplicate_columns(Zbuf[:, :K], Abuf[:K])
        Znew = np.ascontiguousarray(_independent_columns(Zm.Z))
        Anew = least_squares_means(X, Znew)
        live = np.max(np.abs(Anew), axis=1) > MEAN_TOL if Anew.size else np.zeros(0, bool)
        if not live.all():
            # A feature with a zero mean contributes nothing to the fit.
            Znew = np.ascontiguousarray(Znew[:, live])
            Anew = least_squares_means(X, Znew)
        history.append(_bp_total(X, Znew, Anew, lambda2))
        same_Z = Znew.shape == Z.shape and np.array_equal(Znew, Z)
        same_A = same_Z and (Anew.size == 0 or np.max(np.abs(Anew - A)) <= MEAN_TOL)
        Z, A = Znew, Anew
        if not step1_changed and same_Z and same_A:
            converged = True
            break
    F = FeatureAllocation(Z)
    br = ObjectiveBreakdown(float(np.sum((X - Z.astype(float) @ A) ** 2)) if Z.shape[1] else float(np.sum(X * X)),
                            Z.shape[1] * lambda2)
    return SolveResult("bpmeans", F, A, br, it, converged, _seed_value(seed), lambda2, history,
                       1e3 * (time.perf_counter() - t0))


def _independent_columns(Z):
    """Keep a linearly independent subset of the columns of ``Z``, in order.

    A dropped column lies in the span of the kept ones, so least-squares
    fits are unchanged while the per-feature penalty falls.
    """
    K = Z.shape[1]
    if K < 2:
        return Z
    Zf = Z.astype(float)
    _, R, piv = linalg.qr(Zf, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    rank = int(np.sum(d > max(Zf.shape) * np.finfo(float).eps * d[0]))
    if rank == K:
        return Z
    return Z[:, np.sort(piv[:rank])]


def _distinct_columns(Z):
    """Drop empty columns and later copies of repeated columns, keeping order."""
    Z = Z[:, Z.sum(axis=0) > 0]
    if Z.shape[1] < 2:
        return Z
    seen, keep = set(), []
    for k, key in enumerate(np.packbits(Z.T.astype(bool), axis=1)):
        key = key.tobytes()
        if key not in seen:
            seen.add(key)
            keep.append(k)
    return Z[:, keep]


def _collapsed_total(X, Z, lambda2):
    return projection_fit(X, Z) + Z.shape[1] * lambda2


def _row_candidates(Z, n, X, codes, lambda2):
    """Collapsed BP-means objective for every candidate row ``codes`` at ``n``."""
    K = Z.shape[1]
    x = X[n]
    Zm = Z.astype(float)
    Zm[n] = 0.0
    G0 = Zm.T @ Zm
    B0 = Zm.T @ X
    G = G0[None] + codes[:, :, None] * codes[:, None, :]
    B = B0[None] + codes[:, :, None] * x[None, None, :]
    fits = kernels.projection_fits(G, B, float(np.sum(X * X)))
    colsum0 = Zm.sum(axis=0)
    nonempty = (colsum0[None, :] + codes) > 0
    distinct = nonempty.sum(axis=1)
    eq = np.all(Zm[:, :, None] == Zm[:, None, :], axis=0)
    pairs = np.argwhere(np.triu(eq, 1))
    if pairs.size:
        # column k is a repeat when it agrees with some earlier equal column j
        dup = np.zeros(codes.shape, dtype=bool)
        for j, k in pairs:
            dup[:, k] |= (codes[:, j] == codes[:, k]) & nonempty[:, k]
        distinct = distinct - dup.sum(axis=1)
    return np.maximum(fits, 0.0) + distinct * lambda2


def _row_model(Z, n, X):
    """Arguments for ``kernels.collapsed_row_search`` at row ``n``."""
    K = Z.shape[1]
    x = X[n]
    Zm = Z.astype(float)
    Zm[n] = 0.0
    G = Zm.T @ Zm
    w, V = np.linalg.eigh(G)
    live = w > GRAM_RANK_TOL * max(w[-1], 1.0)
    Vl = V[:, live]
    Gp = (Vl / w[live]) @ Vl.T
    B = Zm.T @ X
    Q = Gp @ B
    nul = np.ascontiguousarray(V[:, ~live])
    # columns that agree off row n
    first = {}
    group = np.empty(K, dtype=np.intp)
    for k, key in enumerate(np.packbits(Zm.T.astype(bool), axis=1)):
        group[k] = first.setdefault(key.tobytes(), len(first))
    group_size = np.bincount(group, minlength=len(first)).astype(np.int64)
    group_nonzero = np.zeros(len(first), dtype=np.int8)
    group_nonzero[group[np.diag(G) > 0]] = 1
    rest_fit = float(np.sum(X * X)) - float(np.sum(B * Q))
    exact_fit = rest_fit - float(x @ x)
    return Gp, Q, nul, x, group, group_size, group_nonzero, rest_fit, exact_fit


def _all_codes(K):
    c = np.arange(1 << K, dtype=np.int64)
    return ((c[:, None] >> np.arange(K)) & 1).astype(float)


def collapsed_bp_means(X, lambda2: float, cfg: SolverConfig = DEFAULT_CONFIG, seed=None) -> SolveResult:
    """Collapsed BP-means: per row, pick the membership vector minimizing
    the collapsed objective (exhaustively up to ``cfg.exhaustive_row_cap``
    features, greedily beyond), delete repeated or linearly dependent
    features, then try a new
    private feature for the row."""
    t0 = time.perf_counter()
    X = as_data(X)
    N, D = X.shape
    tol = cfg.change_tol
    if seed is None:
        Z = np.zeros((N, 0), dtype=np.int8)
    else:
        rng = _rng(seed)
        Z0, _ = plusplus_init(X, "feature", capK=int(rng.integers(1, N + 1)), lambda2=lambda2, seed=rng)
        Z = _independent_columns(_distinct_columns(Z0))
    Z = np.ascontiguousarray(Z, dtype=np.int8)
    current = _collapsed_total(X, Z, lambda2)
    history = [current]
    converged = False
    it = 0
    # a row's update depends only on Z, so a row seen at the current version is settled
    version = 0
    seen = np.full(N, -1)
    for it in range(1, cfg.max_iters + 1):
        changed = False
        for n in range(N):
            if seen[n] == version:
                continue
            K = Z.shape[1]
            row_changed = False
            exact_fit = None
            if K:
                if K <= cfg.exhaustive_row_cap:
                    cur_code = int(Z[n].astype(np.int64) @ (1 << np.arange(K)))
                    model = _row_model(Z, n, X)
                    exact_fit = model[-1]
                    best, best_val, cur_val = kernels.collapsed_row_search(*model, lambda2, cur_code)
                    if best_val < cur_val - tol:
                        Z[n] = (best >> np.arange(K)) & 1
                        changed = row_changed = True
                else:
                    improved = True
                    while improved:
                        improved = False
                        cand = np.repeat(Z[n][None].astype(float), K + 1, axis=0)
                        cand[np.arange(1, K + 1), np.arange(K)] = 1.0 - cand[np.arange(1, K + 1), np.arange(K)]
                        vals = _row_candidates(Z, n, X, cand, lambda2)
                        best = int(np.argmin(vals))
                        if vals[best] < vals[0] - tol:
                            Z[n] = cand[best].astype(np.int8)
                            improved = changed = row_changed = True
                if row_changed:
                    Z = np.ascontiguousarray(_independent_columns(_distinct_columns(Z)))
                    current = _collapsed_total(X, Z, lambda2)
            if row_changed:
                version += 1
            seen[n] = version
            e = np.zeros((N, 1), dtype=np.int8)
            e[n] = 1
            if Z.shape[1] and np.any(np.all(Z == e, axis=0)):
                continue
            Zc = np.hstack([Z, e])
            if exact_fit is not None and not row_changed:
                # the unit column makes row n exact; other rows keep their projection
                val = max(exact_fit, 0.0) + Zc.shape[1] * lambda2
            else:
                val = _collapsed_total(X, Zc, lambda2)
            if val < current - tol:
                Z, current = np.ascontiguousarray(Zc), val
                changed = True
                version += 1
        history.append(current)
        if not changed:
            converged = True
            break
    F = canonicalize(Z)
    br = ObjectiveBreakdown(projection_fit(X, F.Z), F.K * lambda2)
    return SolveResult("collapsed-bp", F, None, br, it, converged, _seed_value(seed), lambda2, history,
                       1e3 * (time.perf_counter() - t0))


# --------------------------------------------------------------------------
# K-features and stepwise K-features


def k_features(X, capK: int, cfg: SolverConfig = DEFAULT_CONFIG, init=None, seed=None) -> SolveResult:
    """K-features: alternate exact per-row membership updates (rows are
    independent given the means) with a least-squares refit of the means.

    Without ``init`` the start comes from :func:`plusplus_init` seeded with
    ``seed`` (``cfg.base_seed`` when ``None``).  Identical features are
    merged and empty ones dropped before each refit, so the result may hold
    fewer than ``capK`` features.
    """
    t0 = time.perf_counter()
    X = as_data(X)
    N, D = X.shape
    if capK < 1:
        raise ValueError("capK must be positive")
    if seed is None:
        seed = cfg.base_seed
    if init is None:
        Z, A = plusplus_init(X, "feature", capK=capK, seed=_rng(seed))
    else:
        Z, A = as_binary(init[0], N), np.asarray(init[1], dtype=float)
        if Z.shape[1] > capK:
            raise ValueError("initial allocation has more than capK features")
    Z = np.ascontiguousarray(Z, dtype=np.int8)

    def fit_of(Z, A):
        R = X - Z.astype(float) @ A if Z.shape[1] else X
        return float(np.sum(R * R))

    history = [fit_of(Z, A)]
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        Z1, changed = kernels.kfeatures_rows(X, A, Z, cfg.exhaustive_row_cap, cfg.change_tol)
        Zm, _ = merge_duplicate_columns(Z1, A)
        Znew = np.ascontiguousarray(Zm.Z)
        Anew = least_squares_means(X, Znew)
        history.append(fit_of(Znew, Anew))
        same = (Znew.shape == Z.shape and np.array_equal(Znew, Z)
                and (Anew.size == 0 or np.max(np.abs(Anew - A)) <= MEAN_TOL))
        Z, A = Znew, Anew
        if not changed and same:
            converged = True
            break
    F = FeatureAllocation(Z)
    br = ObjectiveBreakdown(fit_of(Z, A), 0.0)
    return SolveResult("kfeatures", F, A, br, it, converged, _seed_value(seed), None, history,
                       1e3 * (time.perf_counter() - t0))


def _map(fn, items, threads):
    """``list(map(fn, items))``, on a thread pool when ``threads > 1``."""
    items = list(items)
    if (threads or 1) > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def _stream(base_seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng([int(base_seed) & 0xFFFFFFFFFFFFFFFF, *keys])


def stepwise_k_features(X, lambda2: float, cfg: SolverConfig = DEFAULT_CONFIG) -> SolveResult:
    """Run K-features for K = 0, 1, 2, ... keeping the best of
    ``cfg.restarts`` ++-initialized runs at each K, scored by the BP-means
    objective; stop at the first K that does not improve on K - 1.

    ``history`` holds the best penalized score for each K tried.
    """
    t0 = time.perf_counter()
    X = as_data(X)
    N, D = X.shape
    tol = cfg.change_tol
    empty = ObjectiveBreakdown(float(np.sum(X * X)), 0.0)
    best = SolveResult("stepwise", FeatureAllocation(np.zeros((N, 0), dtype=np.int8)), np.zeros((0, D)),
                       empty, 0, True, cfg.base_seed, lambda2, [])
    prev = empty.total
    scores = [prev]
    for K in range(1, N + 1):
        runs = _map(lambda r, K=K: k_features(X, K, cfg, seed=_stream(cfg.base_seed, K, r)),
                    range(cfg.restarts), cfg.threads)
        scores_k = [res.breakdown.fit + res.K * lambda2 for res in runs]
        r = min(range(len(runs)), key=lambda i: (scores_k[i], i))
        score, res = scores_k[r], runs[r]
        scores.append(score)
        if score < best.objective - tol:
            best = replace(res, algorithm="stepwise",
                           breakdown=ObjectiveBreakdown(res.breakdown.fit, res.K * lambda2),
                           seed=cfg.base_seed, lambda2=lambda2)
        if not score < prev - tol:
            break
        prev = score
    best.history = scores
    best.runtime_ms = 1e3 * (time.perf_counter() - t0)
    return best


# --------------------------------------------------------------------------
# Mahalanobis K-means


def _floor_spd(S, eps):
    w, V = np.linalg.eigh((S + S.T) / 2.0)
    return (V * np.maximum(w, eps)) @ V.T


def mahalanobis_kmeans(X, capK: int, lambda2: float, cfg: SolverConfig = DEFAULT_CONFIG, seed=None,
                       *, fix_covariance: bool = False, eps: float = 1e-8):
    """Alternating minimization of the Mahalanobis clustering objective.

    Assign each point to the cluster with the smallest Mahalanobis
    distance, set means to cluster means and covariances to
    ``scatter / lambda2`` with eigenvalues floored at ``eps``.  A cluster
    left empty takes over the point farthest (in its own cluster's metric)
    from its mean among clusters with at least two members.  With
    ``fix_covariance`` every covariance stays the identity and the
    iteration is plain K-means.

    Returns ``(SolveResult, MahalanobisParams)``.
    """
    t0 = time.perf_counter()
    X = as_data(X)
    N, D = X.shape
    if capK < 1 or not lambda2 > 0:
        raise ValueError("need capK >= 1 and lambda2 > 0")
    if seed is None:
        seed = cfg.base_seed
    Z0, M = plusplus_init(X, "cluster", capK=capK, seed=_rng(seed))
    K = Z0.shape[1]
    labels = np.argmax(Z0, axis=1)
    Sig = np.repeat(np.eye(D)[None], K, axis=0)

    def distances():
        out = np.empty((N, K))
        for k in range(K):
            d = X - M[k]
            out[:, k] = np.sum(d * np.linalg.solve(Sig[k], d.T).T, axis=1)
        return out

    def objective():
        fit = float(np.sum(distances()[np.arange(N), labels]))
        pen = sum(np.linalg.slogdet(Sig[k])[1] for k in range(K))
        return fit + lambda2 * pen

    history = [objective()]
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        old = labels.copy()
        dist = distances()
        labels = np.argmin(dist, axis=1)
        counts = np.bincount(labels, minlength=K)
        for k in np.flatnonzero(counts == 0):
            own = dist[np.arange(N), labels].copy()
            own[counts[labels] < 2] = -np.inf
            n = int(np.argmax(own))
            counts[labels[n]] -= 1
            labels[n] = k
            counts[k] = 1
        for k in range(K):
            idx = labels == k
            M[k] = X[idx].mean(axis=0)
            if not fix_covariance:
                d = X[idx] - M[k]
                Sig[k] = _floor_spd(d.T @ d / lambda2, eps)
        history.append(objective())
        if np.array_equal(labels, old) and it > 1:
            converged = True
            break
    C = Clustering.from_labels(labels)
    ks = labels[np.argmax(C.Z, axis=0)]
    A = M[ks]
    params = MahalanobisParams(tuple(Sig[k] for k in ks))
    br = mahalanobis_objective(X, C, A, params, lambda2)
    res = SolveResult("mahalanobis", C, A, br, it, converged, _seed_value(seed), lambda2, history,
                      1e3 * (time.perf_counter() - t0))
    res.params = params
    return res, params


# --------------------------------------------------------------------------
# restarts


@dataclass(frozen=True)
class Problem:
    """What to solve: an algorithm name plus its data and settings."""

    algorithm: str
    X: np.ndarray
    lambda2: Optional[float] = None
    capK: Optional[int] = None


def _solve_once(problem: Problem, cfg: SolverConfig, seed: int) -> SolveResult:
    name = problem.algorithm
    if name == "dpmeans":
        return dp_means(problem.X, problem.lambda2, cfg, seed)
    if name == "bpmeans":
        return bp_means(problem.X, problem.lambda2, cfg, seed)
    if name == "collapsed-dp":
        return collapsed_dp_means(problem.X, problem.lambda2, cfg, seed)
    if name == "collapsed-bp":
        return collapsed_bp_means(problem.X, problem.lambda2, cfg, seed)
    if name == "kfeatures":
        return k_features(problem.X, problem.capK, cfg, seed=seed)
    if name == "mahalanobis":
        return mahalanobis_kmeans(problem.X, problem.capK, problem.lambda2, cfg, seed)[0]
    raise ValueError(f"unknown algorithm {name!r}")


SOLVERS = ("dpmeans", "bpmeans", "collapsed-dp", "collapsed-bp", "kfeatures", "mahalanobis")


def run_restarts(problem: Problem, cfg: SolverConfig = DEFAULT_CONFIG, *,
                 solve: Optional[Callable] = None, return_all: bool = False):
    """Run ``cfg.restarts`` independent seeded runs and keep the best.

    Run ``r`` uses seed ``cfg.base_seed + r``.  The winner is the lowest
    objective, ties going to the lowest ``r``, so the result does not
    depend on ``cfg.threads``.
    """
    solve = solve or _solve_once
    seeds = [cfg.base_seed + r for r in range(cfg.restarts)]
    runs = _map(lambda s: solve(problem, cfg, s), seeds, cfg.threads)
    winner = min(range(len(runs)), key=lambda r: (runs[r].objective, r))
    if return_all:
        return runs[winner], runs
    return runs[winner]

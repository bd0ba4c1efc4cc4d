"""Limiting objectives, closed-form mean updates and the asymptotic-gap check."""

from __future__ import annotations

import math
from typing import Iterable, Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .model import (
    Hyperparams,
    MahalanobisParams,
    ObjectiveBreakdown,
    SingularGramError,
    as_binary,
    as_clustering,
    as_data,
    has_duplicate_columns,
)
from .priors import ModelKind, joint_neg_log, residual


def _trace_fit(X, Z, A) -> float:
    R = residual(X, Z, A)
    return float(np.sum(R * R))


def _cluster_members(C):
    C = as_clustering(C)
    return C, [np.flatnonzero(C.Z[:, k]) for k in range(C.K)]


def dp_means_objective(X, C, A, lambda2: float, *, penalize_all: bool = False) -> ObjectiveBreakdown:
    """Within-cluster squared distances to the given means plus ``lambda2``
    per cluster after the first (or per cluster, with ``penalize_all``)."""
    X = as_data(X)
    C, members = _cluster_members(C)
    A = np.asarray(A, dtype=float)
    if C.N != X.shape[0] or A.shape != (C.K, X.shape[1]):
        raise ValueError("dimension mismatch between X, C and A")
    fit = 0.0
    for k, idx in enumerate(members):
        d = X[idx] - A[k]
        fit += float(np.sum(d * d))
    n_pen = C.K if penalize_all else C.K - 1
    return ObjectiveBreakdown(fit, n_pen * lambda2)


def bp_means_objective(X, Z, A, lambda2: float) -> ObjectiveBreakdown:
    X = as_data(X)
    Zb = as_binary(Z, X.shape[0])
    return ObjectiveBreakdown(_trace_fit(X, Zb, A), Zb.shape[1] * lambda2)


def collapsed_dp_trace_fit(X, C) -> float:
    """``tr(X'(I - Z(Z'Z)^{-1}Z')X)`` for a clustering, where ``Z'Z`` is diagonal."""
    X = as_data(X)
    C = as_clustering(C)
    Zf = C.Z.astype(float)
    sizes = Zf.sum(axis=0)
    B = Zf.T @ X
    return float(np.sum(X * X) - np.sum((B * B) / sizes[:, None]))


def collapsed_dp_objective(X, C, lambda2: float, *, check: bool = True) -> ObjectiveBreakdown:
    """Squared distances to the empirical cluster means plus ``(K-1) lambda2``.

    With ``check`` the trace form of the same fit is evaluated as well and
    the two must agree.
    """
    X = as_data(X)
    C, members = _cluster_members(C)
    if C.N != X.shape[0]:
        raise ValueError("dimension mismatch between X and C")
    fit = 0.0
    for idx in members:
        d = X[idx] - X[idx].mean(axis=0)
        fit += float(np.sum(d * d))
    if check:
        trace = collapsed_dp_trace_fit(X, C)
        scale = max(1.0, float(np.sum(X * X)))
        if abs(trace - fit) > 1e-9 * scale:
            raise ArithmeticError(f"trace form {trace!r} disagrees with sum form {fit!r}")
    return ObjectiveBreakdown(fit, (C.K - 1) * lambda2)


def projection_fit(X, Z) -> float:
    """Residual sum of squares of ``X`` after least-squares projection on
    the columns of ``Z``.

    Uses a Cholesky solve of ``Z'Z``; linearly dependent (but distinct)
    columns fall back to a least-squares solve, which gives the same
    orthogonal projection.
    """
    X = np.asarray(X, dtype=float)
    Zf = as_binary(Z).astype(float)
    xx = float(np.sum(X * X))
    if Zf.shape[1] == 0:
        return xx
    B = Zf.T @ X
    try:
        factor = cho_factor(Zf.T @ Zf, lower=True)
        diag = np.abs(np.diag(factor[0]))
        if diag.min() <= 1e-7 * diag.max():
            raise np.linalg.LinAlgError("ill-conditioned Gram")
        fit = xx - float(np.sum(B * cho_solve(factor, B)))
    except np.linalg.LinAlgError:
        A = np.linalg.lstsq(Zf, X, rcond=None)[0]
        R = X - Zf @ A
        return float(np.sum(R * R))
    return max(fit, 0.0)


def collapsed_bp_objective(X, Z, lambda2: float) -> ObjectiveBreakdown:
    X = as_data(X)
    Zb = as_binary(Z, X.shape[0])
    if has_duplicate_columns(Zb):
        raise SingularGramError("duplicate columns make Z'Z singular; merge them first")
    return ObjectiveBreakdown(projection_fit(X, Zb), Zb.shape[1] * lambda2)


def k_features_objective(X, Z, A) -> float:
    X = as_data(X)
    return _trace_fit(X, as_binary(Z, X.shape[0]), A)


def _n_nonempty(Z) -> int:
    return int(np.count_nonzero(as_binary(Z).sum(axis=0)))


def finite_cluster_objective(X, C, A, lambda2: float, capK: int) -> ObjectiveBreakdown:
    C = as_clustering(C)
    if C.K > capK:
        raise ValueError(f"{C.K} clusters exceed the cap of {capK}")
    base = dp_means_objective(X, C, A, lambda2)
    return ObjectiveBreakdown(base.fit, (min(capK, C.K) - 1) * lambda2)


def finite_feature_objective(X, Z, A, lambda2: float, capK: int) -> ObjectiveBreakdown:
    Kp = _n_nonempty(Z)
    if Kp > capK:
        raise ValueError(f"{Kp} features exceed the cap of {capK}")
    return ObjectiveBreakdown(k_features_objective(X, Z, A), min(capK, Kp) * lambda2)


def mahalanobis_objective(X, C, A, mp: MahalanobisParams, lambda2: float) -> ObjectiveBreakdown:
    """Mahalanobis within-cluster distances plus ``lambda2 * sum_k log|Sigma_k|``.

    The penalty is negative whenever a covariance has determinant below one.
    """
    X = as_data(X)
    C, members = _cluster_members(C)
    A = np.asarray(A, dtype=float)
    if len(mp.Sigmas) != C.K:
        raise ValueError(f"need one covariance per cluster ({C.K}), got {len(mp.Sigmas)}")
    if A.shape != (C.K, X.shape[1]):
        raise ValueError("dimension mismatch between X and A")
    fit = 0.0
    penalty = 0.0
    for k, idx in enumerate(members):
        factor = cho_factor(mp.Sigmas[k], lower=True)
        d = X[idx] - A[k]
        fit += float(np.sum(d.T * cho_solve(factor, d.T)))
        penalty += 2.0 * float(np.sum(np.log(np.diag(factor[0]))))
    return ObjectiveBreakdown(fit, lambda2 * penalty)


def optimal_means(X, Z) -> np.ndarray:
    """``(Z'Z)^{-1} Z'X``, the minimizer of the trace fit for fixed ``Z``."""
    X = as_data(X)
    Zf = as_binary(Z, X.shape[0]).astype(float)
    if Zf.shape[1] == 0:
        raise ValueError("optimal means need at least one feature")
    try:
        factor = cho_factor(Zf.T @ Zf, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularGramError("Z'Z is singular (duplicate or dependent columns)") from exc
    return cho_solve(factor, Zf.T @ X)


def least_squares_means(X, Z) -> np.ndarray:
    """Minimum-norm minimizer of the trace fit, defined for any ``Z``."""
    X = np.asarray(X, dtype=float)
    Zf = as_binary(Z).astype(float)
    if Zf.shape[1] == 0:
        return np.zeros((0, X.shape[1]))
    try:
        return optimal_means(X, Zf)
    except SingularGramError:
        return np.linalg.lstsq(Zf, X, rcond=None)[0]


def trace_fit_gradient(X, Z, A) -> np.ndarray:
    """Gradient ``-2 Z'(X - ZA)`` of ``tr[(X-ZA)'(X-ZA)]`` with respect to ``A``."""
    Zf = as_binary(Z).astype(float)
    return -2.0 * Zf.T @ residual(X, Zf, A)


def limiting_objective(model: ModelKind, X, Z, A, lambda2: float, capK: Optional[int] = None) -> ObjectiveBreakdown:
    model = ModelKind(model)
    if model is ModelKind.CRP_MIXTURE:
        return dp_means_objective(X, Z, A, lambda2)
    if model is ModelKind.IBP_LINEAR_GAUSSIAN:
        return bp_means_objective(X, Z, A, lambda2)
    if model is ModelKind.COLLAPSED_CRP:
        return collapsed_dp_objective(X, Z, lambda2)
    if model is ModelKind.COLLAPSED_IBP:
        return collapsed_bp_objective(X, Z, lambda2)
    if model is ModelKind.FINITE_DIRICHLET_MULTINOMIAL:
        return finite_cluster_objective(X, Z, A, lambda2, capK)
    return finite_feature_objective(X, Z, A, lambda2, capK)


def asymptotic_gap(
    model: ModelKind,
    X,
    Z,
    A,
    lambda2: float,
    sigma2_grid: Iterable[float],
    rho2: float = 1.0,
    capK: Optional[int] = None,
) -> list[tuple[float, float]]:
    """Ratios ``2 sigma2 * (-log p) / limiting objective`` along a
    decreasing variance grid; they tend to one as ``sigma2 -> 0``."""
    model = ModelKind(model)
    grid = [float(s) for s in sigma2_grid]
    if any(b >= a for a, b in zip(grid, grid[1:])):
        raise ValueError("sigma2_grid must be strictly decreasing")
    target = limiting_objective(model, X, Z, A, lambda2, capK).total
    if target == 0:
        raise ValueError("limiting objective is zero; pick a nondegenerate instance")
    out = []
    for s2 in grid:
        hp = Hyperparams(lambda2=lambda2, sigma2=s2, rho2=rho2, capK=capK)
        value = 2.0 * s2 * joint_neg_log(model, X, Z, None if model.collapsed else A, hp)
        out.append((s2, value / target))
    return out

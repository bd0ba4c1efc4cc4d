"""Brute-force optima and numeric integration, for testing only.

Everything here is exponential in ``N`` and deliberately avoids the solver
and objective code paths it is used to check.
"""

from __future__ import annotations

import itertools
import math
from typing import Iterator

import numpy as np
from scipy import integrate, optimize

from .model import Clustering, FeatureAllocation, as_binary, as_data, canonicalize

MAX_PARTITION_N = 10


def enumerate_partitions(N: int) -> Iterator[Clustering]:
    """Every set partition of ``N`` points, via restricted growth strings."""
    if N < 1 or N > MAX_PARTITION_N:
        raise ValueError(f"N must be in 1..{MAX_PARTITION_N}")

    def grow(prefix, top):
        if len(prefix) == N:
            yield list(prefix)
            return
        for label in range(top + 2):
            prefix.append(label)
            yield from grow(prefix, max(top, label))
            prefix.pop()

    for labels in grow([0], 0):
        Z = np.zeros((N, max(labels) + 1), dtype=np.int8)
        Z[np.arange(N), labels] = 1
        yield Clustering(canonicalize(Z).Z)


def enumerate_feature_allocations(N: int, Kmax: int) -> Iterator[FeatureAllocation]:
    """Every allocation with at most ``Kmax`` non-empty columns, each
    multiset of columns exactly once (repeated columns included)."""
    if N < 1 or N > 4 or Kmax < 0 or Kmax > 3:
        raise ValueError("enumeration is limited to N <= 4, Kmax <= 3")
    patterns = [tuple((c >> (N - 1 - i)) & 1 for i in range(N)) for c in range(1, 1 << N)]
    for K in range(Kmax + 1):
        for combo in itertools.combinations_with_replacement(patterns, K):
            Z = np.array(combo, dtype=np.int8).T if K else np.zeros((N, 0), dtype=np.int8)
            yield canonicalize(Z)


def _within_ss(X, labels) -> float:
    total = 0.0
    for lab in set(labels):
        pts = X[[i for i, l in enumerate(labels) if l == lab]]
        centroid = pts.sum(axis=0) / len(pts)
        total += float(((pts - centroid) ** 2).sum())
    return total


def oracle_dp_optimum(X, lambda2: float) -> tuple[Clustering, float]:
    """Global minimum of the DP-means objective over all partitions,
    with each cluster's mean at its centroid."""
    X = as_data(X)
    if X.shape[0] > 8:
        raise ValueError("oracle_dp_optimum is limited to N <= 8")
    best = None
    for C in enumerate_partitions(X.shape[0]):
        labels = list(np.argmax(C.Z, axis=1))
        value = _within_ss(X, labels) + (C.K - 1) * lambda2
        if best is None or value < best[1]:
            best = (C, value)
    return best


def _projection_residual(X, Z) -> float:
    if Z.shape[1] == 0:
        return float((X ** 2).sum())
    P = Z @ np.linalg.pinv(Z.astype(float))
    R = X - P @ X
    return float((R ** 2).sum())


def oracle_bp_optimum(X, lambda2: float, Kmax: int = 3) -> tuple[FeatureAllocation, float]:
    """Global minimum of the BP-means objective over allocations with at
    most ``Kmax`` features, means set by least squares for each candidate.

    Exact for the unrestricted problem whenever ``N <= Kmax`` or
    ``(Kmax + 1) * lambda2 >= tr(X'X)``: an optimum never repeats a
    column, and more than ``Kmax`` columns can only help when they span
    enough of ``R^N`` to beat the empty allocation.
    """
    X = as_data(X)
    best = None
    for F in enumerate_feature_allocations(X.shape[0], Kmax):
        value = _projection_residual(X, F.Z) + F.K * lambda2
        if best is None or value < best[1]:
            best = (F, value)
    return best


def oracle_is_exact(X, lambda2: float, Kmax: int) -> bool:
    X = as_data(X)
    return X.shape[0] <= Kmax or (Kmax + 1) * lambda2 >= float((X ** 2).sum())


def collapsed_likelihood_quadrature(X, Z, sigma2: float, rho2: float) -> float:
    """``log`` of the means-integrated likelihood by numeric integration.

    The integral factorizes over data columns; each factor is a ``K``
    dimensional integral done with ``scipy.integrate`` around the mode of
    the integrand (found numerically), with ``K <= 3``.
    """
    X = as_data(X)
    Zb = as_binary(Z, X.shape[0]).astype(float)
    N, D = X.shape
    K = Zb.shape[1]
    if K * D > 4 or K > 3:
        raise ValueError("quadrature oracle is limited to K * D <= 4 and K <= 3")
    log_norm_x = -0.5 * N * math.log(2 * math.pi * sigma2)
    if K == 0:
        return D * log_norm_x - float((X ** 2).sum()) / (2 * sigma2)
    log_norm_a = -0.5 * K * math.log(2 * math.pi * rho2)
    total = 0.0
    for d in range(D):
        x = X[:, d]

        def log_f(a, x=x):
            r = x - Zb @ a
            return log_norm_x + log_norm_a - r @ r / (2 * sigma2) - a @ a / (2 * rho2)

        opt = optimize.minimize(lambda a: -log_f(a), np.zeros(K), method="BFGS",
                                options={"gtol": 1e-12})
        mode = opt.x
        peak = log_f(mode)
        # marginal spread from the curvature of the integrand
        H = Zb.T @ Zb / sigma2 + np.eye(K) / rho2
        sd = np.sqrt(np.diag(np.linalg.inv(H)))
        bounds = [(mode[k] - 12 * sd[k], mode[k] + 12 * sd[k]) for k in range(K)]

        def integrand(*a):
            return math.exp(log_f(np.array(a)) - peak)

        value, _ = integrate.nquad(integrand, bounds, opts={"epsabs": 0.0, "epsrel": 1e-11, "limit": 200})
        total += peak + math.log(value)
    return total

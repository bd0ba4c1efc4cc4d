"""Log-probabilities of the clustering and feature-allocation models.

Everything is computed in log space with ``gammaln``.  The CRP
concentration and IBP mass underflow to zero long before the small-variance
limit is reached, so the functions that take them also accept the log of
the parameter directly.
"""

from __future__ import annotations

import enum
import math
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import gammaln

from .model import (
    Clustering,
    FeatureAllocation,
    Hyperparams,
    SingularGramError,
    as_binary,
    as_clustering,
    as_data,
    canonicalize,
)

LOG_2PI = math.log(2.0 * math.pi)


class ModelKind(enum.Enum):
    CRP_MIXTURE = "crp"
    IBP_LINEAR_GAUSSIAN = "ibp"
    COLLAPSED_CRP = "collapsed-crp"
    COLLAPSED_IBP = "collapsed-ibp"
    FINITE_DIRICHLET_MULTINOMIAL = "finite-dm"
    FINITE_BETA_BERNOULLI = "finite-bb"

    @property
    def collapsed(self) -> bool:
        return self in (ModelKind.COLLAPSED_CRP, ModelKind.COLLAPSED_IBP)

    @property
    def clustering(self) -> bool:
        return self in (
            ModelKind.CRP_MIXTURE,
            ModelKind.COLLAPSED_CRP,
            ModelKind.FINITE_DIRICHLET_MULTINOMIAL,
        )


def _log_param(value, log_value, name):
    if log_value is not None:
        return float(log_value)
    if value is None:
        raise TypeError(f"{name} or log_{name} is required")
    if not value > 0:
        raise ValueError(f"{name} must be positive, got {value}")
    return math.log(value)


def _lgamma_of_log(log_x: float) -> float:
    """``gammaln(exp(log_x))``, valid even when ``exp(log_x)`` underflows."""
    x = math.exp(log_x)
    if x > 1e-300:
        return float(gammaln(x))
    # Gamma(x) ~ 1/x as x -> 0; the next term is O(x) and below double precision here.
    return -log_x


def log_eppf(C, theta: Optional[float] = None, *, log_theta: Optional[float] = None) -> float:
    """Log probability of a partition under the Chinese restaurant process."""
    C = as_clustering(C)
    lt = _log_param(theta, log_theta, "theta")
    th = math.exp(lt)
    N = C.N
    sizes = C.column_sums
    return (
        (C.K - 1) * lt
        + float(gammaln(th + 1.0) - gammaln(th + N))
        + float(np.sum(gammaln(sizes)))
    )


def log_efpf(
    Z, gamma: Optional[float] = None, N: Optional[int] = None, *, log_gamma: Optional[float] = None
) -> float:
    """Log probability of a feature allocation (as an unordered collection
    of columns) under the Indian buffet process."""
    Zb = as_binary(Z, N)
    lg = _log_param(gamma, log_gamma, "gamma")
    g = math.exp(lg)
    N = Zb.shape[0]
    F = canonicalize(Zb)
    S = F.column_sums
    harmonic = sum(1.0 / n for n in range(1, N + 1))
    # S^{-1} binom(N, S)^{-1} = (S-1)! (N-S)! / N!
    per_column = gammaln(S) + gammaln(N - S + 1) - gammaln(N + 1)
    return (
        F.K * lg
        - g * harmonic
        - float(np.sum(gammaln(F.unique_column_stats() + 1)))
        + float(np.sum(per_column))
    )


def log_linear_gaussian_likelihood(X, Z, A, sigma2: float) -> float:
    X = as_data(X)
    R = residual(X, Z, A)
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    N, D = X.shape
    return -0.5 * N * D * (LOG_2PI + math.log(sigma2)) - float(np.sum(R * R)) / (2.0 * sigma2)


def residual(X, Z, A) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    Zb = as_binary(Z)
    A = np.asarray(A, dtype=float)
    if Zb.shape[1] == 0:
        if A.size and A.shape[0] != 0:
            raise ValueError("means must be empty when there are no features")
        return X.copy()
    if Zb.shape[0] != X.shape[0] or A.ndim != 2 or A.shape != (Zb.shape[1], X.shape[1]):
        raise ValueError(
            f"dimension mismatch: X {X.shape}, Z {Zb.shape}, A {getattr(A, 'shape', None)}"
        )
    return X - Zb @ A


def log_collapsed_likelihood(X, Z, sigma2: float, rho2: float) -> float:
    """Log marginal of ``X`` given ``Z`` with the feature means integrated out.

    Columns of ``X`` are independent ``N(0, sigma2 I + rho2 Z Z')`` vectors;
    the Woodbury form only needs the K x K matrix ``Z'Z + (sigma2/rho2) I``.
    """
    X = as_data(X)
    Zb = as_binary(Z, X.shape[0]).astype(float)
    if not (sigma2 > 0 and rho2 > 0):
        raise ValueError("sigma2 and rho2 must be positive")
    N, D = X.shape
    K = Zb.shape[1]
    base = -0.5 * N * D * (LOG_2PI + math.log(sigma2))
    xx = float(np.sum(X * X))
    if K == 0:
        return base - xx / (2.0 * sigma2)
    M = Zb.T @ Zb + (sigma2 / rho2) * np.eye(K)
    try:
        factor = cho_factor(M, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularGramError("regularized Gram matrix is not positive definite") from exc
    B = Zb.T @ X
    quad = xx - float(np.sum(B * cho_solve(factor, B)))
    logdet = 2.0 * float(np.sum(np.log(np.diag(factor[0]))))
    return base - 0.5 * K * D * math.log(rho2 / sigma2) - 0.5 * D * logdet - quad / (2.0 * sigma2)


def log_dirichlet_multinomial_prior(
    C, theta: Optional[float] = None, capK: int = 1, *, log_theta: Optional[float] = None
) -> float:
    """Log probability of a labeled assignment into ``capK`` clusters.

    Columns of ``C`` are the labels in use; empty columns are allowed and
    any labels beyond ``C``'s columns are empty.
    """
    Zb = as_binary(C)
    if np.any(Zb.sum(axis=1) != 1):
        raise ValueError("every row must belong to exactly one cluster")
    S = Zb.sum(axis=0)
    S = S[S > 0]
    if S.size > capK:
        raise ValueError(f"{S.size} non-empty clusters exceed the cap of {capK}")
    lt = _log_param(theta, log_theta, "theta")
    th = math.exp(lt)
    N = Zb.shape[0]
    K_th_log = math.log(capK) + lt
    out = _lgamma_of_log(K_th_log) - float(gammaln(N + capK * th))
    out += float(np.sum(gammaln(S + th))) - S.size * _lgamma_of_log(lt)
    return out


def log_beta_bernoulli_prior(
    Z, gamma: Optional[float] = None, capK: int = 1, *, log_gamma: Optional[float] = None
) -> float:
    """Log probability of a binary matrix with ``capK`` columns under the
    finite beta-Bernoulli model; missing columns count as all-zero."""
    Zb = as_binary(Z)
    N = Zb.shape[0]
    S = Zb.sum(axis=0)
    if np.count_nonzero(S) > capK:
        raise ValueError("more non-empty columns than the cap allows")
    if Zb.shape[1] > capK:
        S = S[S > 0]
    S = np.concatenate([S, np.zeros(capK - S.size, dtype=S.dtype)]).astype(float)
    lg = _log_param(gamma, log_gamma, "gamma")
    g = math.exp(lg)
    occupied = S > 0
    common = gammaln(N - S + 1) - gammaln(N + g + 1)
    # Gamma(S+g) Gamma(g+1) / Gamma(g): for S = 0 this is Gamma(g+1); otherwise g * Gamma(S+g).
    head = np.where(occupied, gammaln(np.maximum(S, 1) + g) + lg, gammaln(g + 1))
    return float(np.sum(common + head))


def log_mean_prior(A, rho2: float) -> float:
    """Sum over rows of ``log N(mu_k | 0, rho2 I)``."""
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 0.0
    K, D = A.shape
    return -0.5 * K * D * (LOG_2PI + math.log(rho2)) - float(np.sum(A * A)) / (2.0 * rho2)


def joint_neg_log(model: ModelKind, X, Z, A, hp: Hyperparams) -> float:
    """``-log p(X, Z[, A])`` for the given generative model.

    The CRP concentration / IBP mass (and their finite analogues) are tied
    to the variance through ``hp``.
    """
    model = ModelKind(model)
    X = as_data(X)
    if model.collapsed and A is not None:
        raise ValueError(f"{model.value} integrates the means out; do not pass A")
    if not model.collapsed and A is None:
        raise ValueError(f"{model.value} needs the means A")
    lt = hp.log_theta
    N = X.shape[0]
    if model is ModelKind.CRP_MIXTURE:
        logp = log_linear_gaussian_likelihood(X, Z, A, hp.sigma2) + log_eppf(Z, log_theta=lt)
        logp += log_mean_prior(A, hp.rho2)
    elif model is ModelKind.IBP_LINEAR_GAUSSIAN:
        logp = log_linear_gaussian_likelihood(X, Z, A, hp.sigma2) + log_efpf(Z, N=N, log_gamma=lt)
        logp += log_mean_prior(A, hp.rho2)
    elif model is ModelKind.COLLAPSED_CRP:
        logp = log_collapsed_likelihood(X, Z, hp.sigma2, hp.rho2) + log_eppf(Z, log_theta=lt)
    elif model is ModelKind.COLLAPSED_IBP:
        logp = log_collapsed_likelihood(X, Z, hp.sigma2, hp.rho2) + log_efpf(Z, N=N, log_gamma=lt)
    elif model is ModelKind.FINITE_DIRICHLET_MULTINOMIAL:
        if hp.capK is None:
            raise ValueError("finite models need hp.capK")
        logp = log_linear_gaussian_likelihood(X, Z, A, hp.sigma2)
        logp += log_dirichlet_multinomial_prior(Z, capK=hp.capK, log_theta=lt)
        logp += log_mean_prior(A, hp.rho2)
    else:
        if hp.capK is None:
            raise ValueError("finite models need hp.capK")
        logp = log_linear_gaussian_likelihood(X, Z, A, hp.sigma2)
        logp += log_beta_bernoulli_prior(Z, capK=hp.capK, log_gamma=lt)
        logp += log_mean_prior(A, hp.rho2)
    return -logp


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_crp(N: int, theta: float, seed=None) -> Clustering:
    """Draw a partition of ``N`` points by seating customers one at a time.

    ``seed`` may be an integer (seeds a fresh PCG64 stream) or an existing
    ``numpy.random.Generator`` to continue a stream.
    """
    if N < 1 or not theta > 0:
        raise ValueError("need N >= 1 and theta > 0")
    rng = _rng(seed)
    labels = np.zeros(N, dtype=np.int64)
    counts = [1]
    for n in range(1, N):
        # customer n+1 faces n seated customers plus theta for a new table
        u = rng.random() * (n + theta)
        k, acc = 0, float(counts[0])
        while k < len(counts) and u >= acc:
            k += 1
            acc += counts[k] if k < len(counts) else 0.0
        if k == len(counts):
            counts.append(1)
        else:
            counts[k] += 1
        labels[n] = k
    Z = np.zeros((N, len(counts)), dtype=np.int8)
    Z[np.arange(N), labels] = 1
    return Clustering(canonicalize(Z).Z)


def sample_ibp(N: int, gamma: float, seed=None) -> FeatureAllocation:
    """Draw a feature allocation from the sequential buffet scheme,
    returned in canonical column order."""
    if N < 1 or not gamma > 0:
        raise ValueError("need N >= 1 and gamma > 0")
    rng = _rng(seed)
    columns: list[list[int]] = []
    Z = np.zeros((N, 0), dtype=np.int8)
    counts = np.zeros(0)
    for n in range(1, N + 1):
        if counts.size:
            take = rng.random(counts.size) < counts / n
            Z[n - 1, take] = 1
            counts += take
        new = int(rng.poisson(gamma / n))
        if new:
            block = np.zeros((N, new), dtype=np.int8)
            block[n - 1] = 1
            Z = np.hstack([Z, block])
            counts = np.concatenate([counts, np.ones(new)])
    return canonicalize(Z)

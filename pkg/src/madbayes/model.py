"""Shared value types and column canonicalization.

Allocations are stored as ``int8`` matrices of zeros and ones.  The
canonical column order is descending lexicographic order of each column's
bit pattern read from row 0 down to row N-1, so a column containing the
first row sorts before one that does not and the all-ones base feature,
when present, comes first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class SingularGramError(np.linalg.LinAlgError):
    """Raised when ``Z'Z`` cannot be factorized (duplicate or empty columns)."""


def as_data(X) -> np.ndarray:
    """Validate and return ``X`` as a finite 2-D float array."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise ValueError(f"data must be a non-empty N x D matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("data contains non-finite entries")
    return X


def as_binary(Z, n_rows: Optional[int] = None) -> np.ndarray:
    """Return ``Z`` as a 2-D ``int8`` array of zeros and ones."""
    if isinstance(Z, FeatureAllocation):
        Z = Z.Z
    Z = np.asarray(Z)
    if Z.ndim == 1:
        Z = Z[:, None]
    if Z.ndim != 2:
        raise ValueError("allocation must be a matrix")
    if Z.size and not np.all((Z == 0) | (Z == 1)):
        raise ValueError("allocation entries must be 0 or 1")
    Z = Z.astype(np.int8)
    if n_rows is not None and Z.shape[0] != n_rows:
        raise ValueError(f"allocation has {Z.shape[0]} rows, expected {n_rows}")
    return Z


def canonical_order(Z) -> np.ndarray:
    """Column permutation that puts the non-empty columns of ``Z`` in canonical order.

    Empty columns are left out of the returned index array.
    """
    Z = as_binary(Z)
    keep = np.flatnonzero(Z.sum(axis=0) > 0)
    if keep.size == 0:
        return keep
    # np.lexsort sorts by the last key first, so feed rows bottom-up; negate for descending.
    keys = -Z[::-1, keep].astype(np.int64)
    order = np.lexsort(keys)
    return keep[order]


def canonicalize(Z) -> "FeatureAllocation":
    """Drop empty columns and sort the rest into canonical order.

    Duplicate columns are kept; merging them is a separate step because it
    needs the paired means.
    """
    Z = as_binary(Z)
    return FeatureAllocation(Z[:, canonical_order(Z)])


def canonicalize_pair(Z, A) -> tuple[np.ndarray, np.ndarray]:
    """Canonicalize ``Z`` and permute the rows of ``A`` to match."""
    Z = as_binary(Z)
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != Z.shape[1]:
        raise ValueError(f"means have {A.shape[0] if A.ndim else 0} rows, allocation has {Z.shape[1]} columns")
    order = canonical_order(Z)
    return Z[:, order], A[order]


def merge_duplicate_columns(Z, A) -> tuple["FeatureAllocation", np.ndarray]:
    """Collapse identical columns of ``Z`` into one, summing their mean rows.

    The reconstruction ``Z @ A`` is unchanged.  Empty columns are dropped
    and the result is in canonical order.
    """
    Z = as_binary(Z)
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != Z.shape[1]:
        raise ValueError("dimension mismatch between allocation columns and mean rows")
    Zc, Ac = canonicalize_pair(Z, A)
    if Zc.shape[1] == 0:
        return FeatureAllocation(Zc), Ac
    # After sorting, identical columns are adjacent.
    new_group = np.ones(Zc.shape[1], dtype=bool)
    new_group[1:] = np.any(Zc[:, 1:] != Zc[:, :-1], axis=0)
    starts = np.flatnonzero(new_group)
    merged_A = np.add.reduceat(Ac, starts, axis=0)
    return FeatureAllocation(Zc[:, starts]), merged_A


def has_duplicate_columns(Z) -> bool:
    Z = as_binary(Z)
    if Z.shape[1] < 2:
        return False
    return np.unique(Z, axis=1).shape[1] < Z.shape[1]


@dataclass(frozen=True, eq=False)
class FeatureAllocation:
    """Binary N x K+ allocation with no empty columns.

    Construction does not reorder columns; use :func:`canonicalize` for the
    canonical representative.
    """

    Z: np.ndarray

    def __post_init__(self):
        Z = as_binary(self.Z)
        if Z.shape[1] and np.any(Z.sum(axis=0) == 0):
            raise ValueError("feature allocation contains an empty column")
        Z.setflags(write=False)
        object.__setattr__(self, "Z", Z)

    @property
    def N(self) -> int:
        return self.Z.shape[0]

    @property
    def K(self) -> int:
        return self.Z.shape[1]

    @property
    def column_sums(self) -> np.ndarray:
        return self.Z.sum(axis=0).astype(np.int64)

    def unique_column_stats(self) -> np.ndarray:
        """Multiplicity of each distinct column pattern (sums to ``K``)."""
        if self.K == 0:
            return np.zeros(0, dtype=np.int64)
        _, counts = np.unique(self.Z, axis=1, return_counts=True)
        return counts.astype(np.int64)

    def is_canonical(self) -> bool:
        return bool(np.array_equal(canonical_order(self.Z), np.arange(self.K)))

    def features_of(self, n: int) -> list[int]:
        return np.flatnonzero(self.Z[n]).tolist()

    def __array__(self, dtype=None, copy=None):
        return self.Z if dtype is None else self.Z.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, FeatureAllocation):
            return NotImplemented
        return self.Z.shape == other.Z.shape and bool(np.array_equal(self.Z, other.Z))

    def __hash__(self):
        return hash((self.Z.shape, self.Z.tobytes()))

    def __repr__(self):
        return f"{type(self).__name__}(N={self.N}, K={self.K})"


class Clustering(FeatureAllocation):
    """A feature allocation whose rows each contain exactly one 1."""

    def __post_init__(self):
        super().__post_init__()
        if self.N and self.K == 0:
            raise ValueError("a clustering of N >= 1 points needs at least one cluster")
        if np.any(self.Z.sum(axis=1) != 1):
            raise ValueError("every row of a clustering must contain exactly one 1")

    @classmethod
    def from_labels(cls, labels: Sequence[int]) -> "Clustering":
        """Build a canonical clustering from integer labels (any values)."""
        labels = np.asarray(labels)
        _, inverse = np.unique(labels, return_inverse=True)
        Z = np.zeros((labels.size, inverse.max() + 1 if labels.size else 0), dtype=np.int8)
        Z[np.arange(labels.size), inverse] = 1
        return cls(canonicalize(Z).Z)

    @property
    def labels(self) -> np.ndarray:
        return np.argmax(self.Z, axis=1)


def as_clustering(C) -> Clustering:
    if isinstance(C, Clustering):
        return C
    return Clustering(as_binary(C))


@dataclass(frozen=True)
class Hyperparams:
    """Penalty and variance settings; the CRP concentration and IBP mass
    are both ``exp(-lambda2 / (2 sigma2))`` and cannot be set directly."""

    lambda2: float
    sigma2: float = 1.0
    rho2: float = 1.0
    capK: Optional[int] = None

    def __post_init__(self):
        for name in ("lambda2", "sigma2", "rho2"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be a positive finite number, got {v}")
        if self.capK is not None and self.capK < 1:
            raise ValueError("capK must be a positive count")

    @property
    def log_theta(self) -> float:
        return -self.lambda2 / (2.0 * self.sigma2)

    @property
    def theta(self) -> float:
        return math.exp(self.log_theta)

    log_gamma = log_theta
    gamma = theta


@dataclass(frozen=True)
class MahalanobisParams:
    """Per-cluster covariance shapes, with the optional inverse-Wishart
    prior settings (``Phi``, ``nu``) they were drawn under."""

    Sigmas: tuple
    Phi: Optional[np.ndarray] = None
    nu: Optional[float] = None

    def __post_init__(self):
        sigmas = tuple(np.asarray(S, dtype=float) for S in self.Sigmas)
        for S in sigmas:
            _check_spd(S, "Sigma_k")
        object.__setattr__(self, "Sigmas", sigmas)
        if self.Phi is not None:
            Phi = np.asarray(self.Phi, dtype=float)
            _check_spd(Phi, "Phi")
            object.__setattr__(self, "Phi", Phi)
            if self.nu is None or not self.nu > Phi.shape[0] - 1:
                raise ValueError("nu must exceed D - 1")


SPD_FLOOR = 1e-300


def _check_spd(S: np.ndarray, name: str) -> None:
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"{name} must be square")
    if not np.allclose(S, S.T, rtol=1e-10, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(S).min() <= SPD_FLOOR:
        raise ValueError(f"{name} must be positive definite")


@dataclass(frozen=True)
class ObjectiveBreakdown:
    fit: float
    penalty: float

    @property
    def total(self) -> float:
        return self.fit + self.penalty

    def as_dict(self) -> dict:
        return {"fit": self.fit, "penalty": self.penalty, "total": self.total}


@dataclass
class SolveResult:
    """Outcome of one solver run.

    ``history`` records the objective after every completed iteration and
    is what the descent checks inspect.  ``means`` is ``None`` for the
    collapsed solvers.
    """

    algorithm: str
    allocation: FeatureAllocation
    means: Optional[np.ndarray]
    breakdown: ObjectiveBreakdown
    iterations: int
    converged: bool
    seed: Optional[int]
    lambda2: Optional[float] = None
    history: list = field(default_factory=list)
    runtime_ms: float = 0.0
    params: Optional[MahalanobisParams] = None

    @property
    def objective(self) -> float:
        return self.breakdown.total

    @property
    def K(self) -> int:
        return self.allocation.K

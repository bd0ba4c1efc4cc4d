"""CSV ingestion, PCA, synthetic data and result files."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .model import FeatureAllocation, ObjectiveBreakdown, SolveResult, as_data


class DataError(ValueError):
    """Malformed input data."""


def load_csv(path, has_header: bool = False) -> np.ndarray:
    """Read a rectangular numeric CSV into an ``N x D`` float array."""
    rows = []
    width = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1 and has_header:
                continue
            if not row or all(not cell.strip() for cell in row):
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DataError(f"{path}: line {lineno} has {len(row)} fields, expected {width}")
            try:
                rows.append([float(cell) for cell in row])
            except ValueError as exc:
                raise DataError(f"{path}: line {lineno}: non-numeric cell ({exc})") from None
    if not rows:
        raise DataError(f"{path}: no data rows")
    X = np.array(rows, dtype=float)
    if not np.all(np.isfinite(X)):
        raise DataError(f"{path}: non-finite values")
    return X


def save_csv(path, X, header: Optional[list] = None) -> None:
    X = np.asarray(X, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header:
            w.writerow(header)
        for row in X:
            w.writerow([repr(float(v)) for v in row])


def pca_reduce(X, components: int) -> np.ndarray:
    """Scores of the column-centered data on its top principal directions.

    Each loading vector is signed so that its largest-magnitude entry is
    positive, which makes the output reproducible.
    """
    X = as_data(X)
    N, D = X.shape
    if not 1 <= components <= min(N, D):
        raise ValueError(f"components must be in 1..{min(N, D)}, got {components}")
    Xc = X - X.mean(axis=0)
    _, _, Vt = np.linalg.svd(Xc, full_matrices=False)
    V = Vt[:components].T
    pivot = np.argmax(np.abs(V), axis=0)
    V = V * np.sign(V[pivot, np.arange(components)])
    return Xc @ V


@dataclass(frozen=True)
class SyntheticSpec:
    """Planted linear-Gaussian data.

    ``true_k`` counts every feature including the base feature (when
    ``include_base``).  Non-base memberships are Bernoulli(``p``).  When
    ``feature_means`` is omitted they are drawn as ``N(0, mean_scale^2)``.
    """

    N: int
    D: int
    true_k: int
    noise_sigma: float = 0.0
    p: float = 0.5
    include_base: bool = True
    seed: int = 0
    feature_means: Optional[np.ndarray] = None
    mean_scale: float = 1.0

    def __post_init__(self):
        if self.N < 1 or self.D < 1 or self.true_k < 0:
            raise ValueError("N, D must be positive and true_k non-negative")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must be a probability")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.include_base and self.true_k < 1:
            raise ValueError("a base feature needs true_k >= 1")
        if self.feature_means is not None and np.shape(self.feature_means) != (self.true_k, self.D):
            raise ValueError("feature_means must be true_k x D")


def synth_linear_gaussian(spec: SyntheticSpec):
    """Return ``(X, Z, A)`` with ``X = Z A + noise``."""
    rng = np.random.default_rng(spec.seed)
    if spec.feature_means is None:
        A = rng.normal(scale=spec.mean_scale, size=(spec.true_k, spec.D))
    else:
        A = np.array(spec.feature_means, dtype=float)
    Z = (rng.random((spec.N, spec.true_k)) < spec.p).astype(np.int8)
    if spec.include_base:
        Z[:, 0] = 1
    noise = rng.normal(scale=spec.noise_sigma, size=(spec.N, spec.D)) if spec.noise_sigma > 0 else 0.0
    X = Z.astype(float) @ A + noise
    return X, Z, A


def result_to_dict(result: SolveResult) -> dict:
    Z = result.allocation.Z
    return {
        "algorithm": result.algorithm,
        "lambda2": result.lambda2,
        "K": int(result.allocation.K),
        "objective": result.breakdown.as_dict(),
        "assignments": [np.flatnonzero(row).tolist() for row in Z],
        "means": None if result.means is None else np.asarray(result.means, dtype=float).tolist(),
        "iterations": int(result.iterations),
        "converged": bool(result.converged),
        "seed": None if result.seed is None else int(result.seed),
        "runtime_ms": float(result.runtime_ms),
    }


def write_result(result: SolveResult, path, fmt: str = "json") -> None:
    """Write a result as JSON (full record) or CSV (assignments only)."""
    path = Path(path)
    if fmt == "json":
        text = json.dumps(result_to_dict(result), indent=2) + "\n"
        path.write_text(text)
    elif fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row", "features"])
            for n, row in enumerate(result.allocation.Z):
                w.writerow([n, ";".join(str(k) for k in np.flatnonzero(row))])
    else:
        raise ValueError(f"unknown format {fmt!r}")


def _allocation_from_lists(lists, K) -> FeatureAllocation:
    Z = np.zeros((len(lists), K), dtype=np.int8)
    for n, feats in enumerate(lists):
        Z[n, feats] = 1
    return FeatureAllocation(Z)


def read_result(path, fmt: str = "json"):
    """Inverse of :func:`write_result`.

    JSON gives back a :class:`SolveResult`; CSV gives the allocation.
    """
    path = Path(path)
    if fmt == "csv":
        lists = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            for row in reader:
                lists.append([int(v) for v in row[1].split(";")] if row[1] else [])
        K = 1 + max((max(l) for l in lists if l), default=-1)
        return _allocation_from_lists(lists, K)
    d = json.loads(path.read_text())
    alloc = _allocation_from_lists(d["assignments"], d["K"])
    means = None
    if d["means"] is not None:
        means = np.array(d["means"], dtype=float) if d["K"] else np.zeros((0, 0))
    br = ObjectiveBreakdown(d["objective"]["fit"], d["objective"]["penalty"])
    return SolveResult(d["algorithm"], alloc, means, br, d["iterations"], d["converged"], d["seed"],
                       d["lambda2"], [], d["runtime_ms"])

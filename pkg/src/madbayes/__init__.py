"""Hard clustering and feature learning from small-variance limits of
Bayesian nonparametric models."""

from .model import (
    Clustering,
    FeatureAllocation,
    Hyperparams,
    MahalanobisParams,
    ObjectiveBreakdown,
    SingularGramError,
    SolveResult,
    canonicalize,
    merge_duplicate_columns,
)
from .priors import ModelKind, joint_neg_log, log_efpf, log_eppf, sample_crp, sample_ibp
from .objectives import (
    asymptotic_gap,
    bp_means_objective,
    collapsed_bp_objective,
    collapsed_dp_objective,
    dp_means_objective,
    k_features_objective,
    mahalanobis_objective,
    optimal_means,
)
from .solvers import (
    Problem,
    SolverConfig,
    bp_means,
    collapsed_bp_means,
    collapsed_dp_means,
    dp_means,
    k_features,
    mahalanobis_kmeans,
    plusplus_init,
    run_restarts,
    stepwise_k_features,
)
from .data_io import SyntheticSpec, load_csv, pca_reduce, read_result, synth_linear_gaussian, write_result
from .kernels import BACKEND

__version__ = "0.1.0"

import numpy as np
import pytest

from madbayes import oracle
from madbayes.data_io import SyntheticSpec, synth_linear_gaussian
from madbayes.model import Clustering
from madbayes.objectives import (
    bp_means_objective,
    collapsed_bp_objective,
    collapsed_dp_objective,
    dp_means_objective,
    k_features_objective,
    mahalanobis_objective,
)
from madbayes.solvers import (
    SOLVERS,
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

X2 = np.array([[0.0], [2.0]])
ONES = np.array([[1.0], [1.0]])


def descends(history, rel=1e-12):
    h = np.asarray(history)
    return bool(np.all(np.diff(h) <= rel * np.maximum(1.0, np.abs(h[:-1]))))


def planted(seed, N=30, D=3, K=3, noise=0.05):
    X, _, _ = synth_linear_gaussian(SyntheticSpec(N, D, K, noise_sigma=noise, seed=seed, mean_scale=2.0))
    return X


class TestDPMeans:
    def test_small_penalty_splits(self):
        res = dp_means(X2, 0.5)
        assert res.K == 2 and res.objective == pytest.approx(0.5)

    def test_large_penalty_merges(self):
        res = dp_means(X2, 3.0)
        assert res.K == 1 and res.objective == pytest.approx(2.0)
        np.testing.assert_allclose(res.means, [[1.0]])

    def test_identical_points(self):
        res = dp_means(np.ones((5, 2)), 0.1)
        assert res.K == 1 and res.objective == 0.0
        assert res.converged and res.iterations <= 2

    def test_objective_matches_evaluator(self, backend):
        X = planted(3)
        res = dp_means(X, 1.0, seed=4)
        assert res.objective == pytest.approx(dp_means_objective(X, res.allocation, res.means, 1.0).total, rel=1e-12)
        assert isinstance(res.allocation, Clustering) and res.allocation.is_canonical()

    def test_seeded_run_descends(self, backend):
        for seed in range(10):
            res = dp_means(planted(seed), 0.5, seed=seed)
            assert res.converged and descends(res.history)


class TestCollapsedDPMeans:
    def test_small_penalty_splits(self):
        assert collapsed_dp_means(X2, 0.5).objective == pytest.approx(0.5)

    def test_identical_points(self):
        res = collapsed_dp_means(np.full((4, 3), 2.5), 1.0)
        assert res.K == 1 and res.objective == 0.0

    def test_never_below_oracle(self, rng):
        for _ in range(20):
            N = int(rng.integers(2, 7))
            X = rng.normal(size=(N, 2))
            lam = float(rng.uniform(0.2, 3.0))
            _, best = oracle.oracle_dp_optimum(X, lam)
            assert collapsed_dp_means(X, lam, seed=int(rng.integers(1 << 30))).objective >= best - 1e-9

    def test_objective_matches_evaluator(self, backend):
        X = planted(7)
        res = collapsed_dp_means(X, 0.8, seed=1)
        assert res.means is None
        assert res.objective == pytest.approx(collapsed_dp_objective(X, res.allocation, 0.8).total, rel=1e-12)


class TestBPMeans:
    def test_shared_feature(self):
        res = bp_means(ONES, 0.5)
        assert res.K == 1 and res.objective == pytest.approx(0.5)
        np.testing.assert_allclose(res.means, [[1.0]])

    def test_zero_data(self):
        res = bp_means(np.zeros((4, 2)), 1.0, seed=3)
        assert res.K == 0 and res.objective == 0.0

    def test_descends_and_terminates(self, backend):
        for seed in range(100):
            res = bp_means(planted(seed, N=15), [0.1, 1.0, 10.0][seed % 3], seed=seed)
            assert res.converged and res.iterations < 500
            assert descends(res.history)

    def test_local_optimality(self, backend):
        X = planted(11, N=20)
        lam = 0.5
        res = bp_means(X, lam, seed=2)
        Z, A = res.allocation.Z.astype(float), res.means
        base = bp_means_objective(X, Z, A, lam).total
        tol = SolverConfig().change_tol
        for n in range(Z.shape[0]):
            for k in range(Z.shape[1]):
                Zf = Z.copy()
                Zf[n, k] = 1 - Zf[n, k]
                keep = Zf.sum(axis=0) > 0
                assert bp_means_objective(X, Zf[:, keep], A[keep], lam).total >= base - tol
            e = np.zeros((Z.shape[0], 1))
            e[n] = 1
            r = X[n] - Z[n] @ A
            assert bp_means_objective(X, np.hstack([Z, e]), np.vstack([A, r]), lam).total >= base - tol

    def test_objective_matches_evaluator(self, backend):
        X = planted(5)
        res = bp_means(X, 0.3, seed=0)
        assert res.objective == pytest.approx(bp_means_objective(X, res.allocation, res.means, 0.3).total, rel=1e-12)


class TestCollapsedBPMeans:
    def test_zero_data(self):
        assert collapsed_bp_means(np.zeros((3, 2)), 1.0).K == 0

    def test_shared_feature(self):
        res = collapsed_bp_means(ONES, 0.5)
        assert res.K == 1 and res.objective == pytest.approx(0.5)

    def test_descends(self, backend):
        for seed in range(100):
            res = collapsed_bp_means(planted(seed, N=12), [0.1, 1.0, 10.0][seed % 3], seed=seed)
            assert res.converged and descends(res.history)

    def test_objective_matches_evaluator(self, backend):
        X = planted(9)
        res = collapsed_bp_means(X, 0.5, seed=3)
        assert res.objective == pytest.approx(collapsed_bp_objective(X, res.allocation, 0.5).total, rel=1e-10)

    def test_greedy_rows_beyond_cap(self):
        X = planted(1, N=15)
        cfg = SolverConfig(exhaustive_row_cap=1)
        res = collapsed_bp_means(X, 0.05, cfg, seed=1)
        assert res.converged and descends(res.history)


class TestKFeatures:
    def test_fixed_point_at_truth(self, rng):
        Z = np.array([[1, 0], [1, 1], [1, 0], [1, 1]])
        A = rng.normal(size=(2, 3))
        res = k_features(Z @ A, 2, init=(Z, A))
        assert res.objective == pytest.approx(0.0, abs=1e-20)
        assert res.iterations == 1 and res.converged

    def test_one_row_assigned(self):
        X = np.array([[-1.0], [1.0]])
        res = k_features(X, 1, init=(np.array([[0], [1]]), np.array([[1.0]])))
        assert res.objective == pytest.approx(1.0)

    def test_one_hot_rows_give_kmeans_value(self, rng):
        X = rng.normal(size=(9, 2))
        labels = np.array([0, 1, 2, 0, 1, 2, 0, 0, 1])
        Z = np.eye(3, dtype=np.int8)[labels]
        A = np.array([X[labels == k].mean(axis=0) for k in range(3)])
        kmeans = sum(np.sum((X[labels == k] - A[k]) ** 2) for k in range(3))
        assert k_features_objective(X, Z, A) == pytest.approx(kmeans, rel=1e-12)

    def test_row_updates_are_order_independent(self, backend, rng):
        from madbayes import kernels

        X = rng.normal(size=(10, 2))
        A = rng.normal(size=(3, 2))
        Z = (rng.random((10, 3)) < 0.5).astype(np.int8)
        Z1, _ = kernels.kfeatures_rows(X, A, Z, 20, 0.0)
        perm = rng.permutation(10)
        Z2, _ = kernels.kfeatures_rows(X[perm], A, Z[perm], 20, 0.0)
        np.testing.assert_array_equal(Z1[perm], Z2)

    def test_descends(self, backend):
        for seed in range(30):
            res = k_features(planted(seed), 1 + seed % 4, seed=seed)
            assert res.converged and descends(res.history)
            assert res.objective == pytest.approx(k_features_objective(planted(seed), res.allocation, res.means))


class TestPlusPlus:
    def test_base_feature(self):
        Z, A = plusplus_init(X2, "feature", capK=1, seed=0)
        np.testing.assert_array_equal(Z, [[1], [1]])
        np.testing.assert_allclose(A, [[1.0]])

    def test_rank_one_planted(self, rng):
        X = np.ones((6, 1)) @ rng.normal(size=(1, 3)) + 0.01 * rng.normal(size=(6, 3))
        Z, A = plusplus_init(X, "feature", capK=1, seed=0)
        residual = np.sum((X - X.mean(axis=0)) ** 2)
        assert k_features_objective(X, Z, A) == pytest.approx(residual)

    def test_same_seed_same_start(self, rng):
        X = rng.normal(size=(12, 2))
        for mode in ("feature", "cluster"):
            a = plusplus_init(X, mode, capK=3, seed=5)
            b = plusplus_init(X, mode, capK=3, seed=5)
            np.testing.assert_array_equal(a[0], b[0])
            np.testing.assert_array_equal(a[1], b[1])

    def test_zero_residual_falls_back_to_uniform(self):
        Z, A = plusplus_init(np.zeros((4, 2)), "feature", capK=2, seed=1)
        assert Z.shape == (4, 2)

    def test_needs_cap_or_penalty(self):
        with pytest.raises(ValueError):
            plusplus_init(X2, "feature")
        with pytest.raises(ValueError):
            plusplus_init(X2, "diagonal", capK=1)


class TestStepwise:
    def test_zero_data(self):
        res = stepwise_k_features(np.zeros((5, 2)), 1.0)
        assert res.K == 0 and res.objective == 0.0

    def test_two_planted_features(self):
        Z = np.array([[1, 0], [1, 1], [1, 0], [1, 1], [1, 1], [1, 0]])
        A = np.array([[2.0, 0.0, 1.0], [0.0, -1.5, 1.0]])
        X = Z @ A
        res = stepwise_k_features(X, 0.5, SolverConfig(restarts=5))
        assert res.K == 2
        assert res.breakdown.fit == pytest.approx(0.0, abs=1e-12)

    def test_never_worse_than_empty(self, rng):
        X = rng.normal(size=(8, 2))
        res = stepwise_k_features(X, 0.7)
        assert res.objective <= np.sum(X * X) + 1e-12
        assert res.history[0] == pytest.approx(np.sum(X * X))


class TestMahalanobisKMeans:
    def test_fixed_identity_is_kmeans(self, rng):
        X = np.vstack([rng.normal(size=(8, 2)), rng.normal(size=(8, 2)) + 5])
        res, params = mahalanobis_kmeans(X, 2, 1.0, seed=3, fix_covariance=True)
        labels = res.allocation.labels
        np.testing.assert_allclose(res.means, [X[labels == k].mean(axis=0) for k in range(res.K)])
        for n in range(len(X)):
            d = np.sum((res.means - X[n]) ** 2, axis=1)
            assert d[labels[n]] <= d.min() + 1e-12
        for S in params.Sigmas:
            np.testing.assert_array_equal(S, np.eye(2))

    def test_covariance_is_stationary(self, rng):
        X = np.concatenate([rng.normal(0, 1, 20), rng.normal(6, 0.5, 20)])[:, None]
        res, params = mahalanobis_kmeans(X, 2, 1.0, seed=0)
        C, A = res.allocation, res.means
        base = mahalanobis_objective(X, C, A, params, 1.0).total
        for k in range(C.K):
            for step in (1e-4, -1e-4):
                sig = list(params.Sigmas)
                sig[k] = sig[k] * (1 + step)
                moved = mahalanobis_objective(X, C, A, type(params)(tuple(sig)), 1.0).total
                assert moved >= base - 1e-9

    def test_descends(self, backend, rng):
        for seed in range(20):
            X = rng.normal(size=(25, 2)) + rng.integers(0, 2, size=(25, 1)) * 4
            res, _ = mahalanobis_kmeans(X, 1 + seed % 3, 0.5, seed=seed)
            assert res.converged and descends(res.history)

    def test_empty_cluster_reseeded(self):
        X = np.array([[0.0], [0.0], [0.0], [1.0]])
        res, params = mahalanobis_kmeans(X, 3, 1.0, seed=0)
        assert len(params.Sigmas) == res.K


class TestRestarts:
    @pytest.mark.parametrize("algorithm", SOLVERS)
    def test_single_restart_matches_seeded_run(self, algorithm):
        X = planted(2, N=12)
        p = Problem(algorithm, X, lambda2=0.5, capK=2)
        a = run_restarts(p, SolverConfig(restarts=1, base_seed=17))
        b = run_restarts(p, SolverConfig(restarts=1, base_seed=17))
        assert a.seed == 17 and a.allocation == b.allocation and a.objective == b.objective

    def test_winner_is_minimum(self):
        X = planted(4, N=20)
        best, runs = run_restarts(Problem("bpmeans", X, 0.2), SolverConfig(restarts=8), return_all=True)
        assert best.objective == min(r.objective for r in runs)
        first = min(i for i, r in enumerate(runs) if r.objective == best.objective)
        assert best.seed == first

    @pytest.mark.parametrize("algorithm", SOLVERS)
    def test_threads_do_not_change_winner(self, algorithm):
        X = planted(6, N=15)
        p = Problem(algorithm, X, lambda2=0.3, capK=3)
        seq = run_restarts(p, SolverConfig(restarts=6, threads=1))
        par = run_restarts(p, SolverConfig(restarts=6, threads=4))
        assert seq.seed == par.seed and seq.allocation == par.allocation
        assert seq.objective == par.objective

    def test_stepwise_threads(self):
        X = planted(8, N=20)
        a = stepwise_k_features(X, 0.5, SolverConfig(restarts=4, threads=1))
        b = stepwise_k_features(X, 0.5, SolverConfig(restarts=4, threads=3))
        assert a.allocation == b.allocation and a.history == b.history

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from madbayes.model import Clustering, MahalanobisParams, SingularGramError, merge_duplicate_columns
from madbayes.objectives import (
    asymptotic_gap,
    bp_means_objective,
    collapsed_bp_objective,
    collapsed_dp_objective,
    collapsed_dp_trace_fit,
    dp_means_objective,
    finite_cluster_objective,
    finite_feature_objective,
    k_features_objective,
    limiting_objective,
    mahalanobis_objective,
    optimal_means,
    trace_fit_gradient,
)
from madbayes.priors import ModelKind

X2 = np.array([[0.0], [2.0]])


def random_clustering(rng, N, K):
    labels = np.concatenate([np.arange(K), rng.integers(K, size=N - K)])
    rng.shuffle(labels)
    return Clustering.from_labels(labels)


def random_distinct_allocation(rng, N, K):
    while True:
        Z = (rng.random((N, K)) < 0.5).astype(int)
        F, _ = merge_duplicate_columns(Z, np.zeros((K, 1)))
        if F.K and np.linalg.matrix_rank(F.Z) == F.K:
            return F.Z


class TestDPMeans:
    def test_point_at_own_mean(self):
        assert dp_means_objective([[1.5, -2.0]], [[1]], [[1.5, -2.0]], 4.0).total == 0.0

    def test_two_singletons(self):
        assert dp_means_objective(X2, np.eye(2, dtype=int), X2, 1.0).total == 1.0

    def test_one_cluster(self):
        assert dp_means_objective(X2, [[1], [1]], [[1.0]], 1.0).total == 2.0

    def test_penalize_all_variant(self):
        br = dp_means_objective(X2, np.eye(2, dtype=int), X2, 1.0, penalize_all=True)
        assert br.penalty == 2.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            dp_means_objective(X2, [[1], [1]], [[1.0, 2.0]], 1.0)

    def test_differs_from_bp_by_one_penalty(self, rng):
        X = rng.normal(size=(6, 2))
        C = random_clustering(rng, 6, 3)
        A = rng.normal(size=(3, 2))
        dp = dp_means_objective(X, C, A, 0.7)
        bp = bp_means_objective(X, C, A, 0.7)
        assert dp.fit == pytest.approx(bp.fit, rel=1e-12)
        assert bp.total - dp.total == pytest.approx(0.7)


class TestBPMeans:
    def test_no_features(self):
        assert bp_means_objective([[1.0, 1.0]], np.zeros((1, 0)), np.zeros((0, 2)), 5.0).total == 2.0

    def test_exact_reconstruction(self, rng):
        Z = np.array([[1, 0, 1], [1, 1, 0], [0, 1, 1]])
        A = rng.normal(size=(3, 2))
        assert bp_means_objective(Z @ A, Z, A, 1.0).total == pytest.approx(3.0, abs=1e-12)

    def test_small_instance(self):
        br = bp_means_objective([[1.0], [3.0]], [[1, 0], [1, 1]], [[1.0], [2.0]], 0.5)
        assert br.fit == 0.0 and br.total == 1.0


class TestCollapsedDP:
    def test_singletons(self, rng):
        X = rng.normal(size=(4, 2))
        br = collapsed_dp_objective(X, np.eye(4, dtype=int), 0.3)
        assert br.fit == pytest.approx(0.0, abs=1e-12)
        assert br.penalty == pytest.approx(0.9)

    def test_one_cluster(self):
        assert collapsed_dp_objective(X2, [[1], [1]], 1.0).fit == pytest.approx(2.0)

    def test_trace_form_matches_sum_form(self, rng):
        X = rng.normal(size=(5, 2))
        C = random_clustering(rng, 5, 2)
        fit = collapsed_dp_objective(X, C, 1.0, check=False).fit
        assert collapsed_dp_trace_fit(X, C) == pytest.approx(fit, rel=1e-10)

    @given(st.integers(1, 12), st.integers(1, 4), st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=100, deadline=None)
    def test_trace_form_property(self, N, D, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(N, D)) * rng.uniform(0.1, 10)
        C = random_clustering(rng, N, int(rng.integers(1, N + 1)))
        fit = collapsed_dp_objective(X, C, 1.0, check=False).fit
        trace = collapsed_dp_trace_fit(X, C)
        assert trace == pytest.approx(fit, rel=1e-10, abs=1e-10 * np.sum(X * X))


class TestCollapsedBP:
    def test_no_features(self, rng):
        X = rng.normal(size=(3, 2))
        assert collapsed_bp_objective(X, np.zeros((3, 0)), 1.0).fit == pytest.approx(np.sum(X * X))

    def test_identity_interpolates(self, rng):
        X = rng.normal(size=(4, 2))
        br = collapsed_bp_objective(X, np.eye(4, dtype=int), 0.5)
        assert br.fit == pytest.approx(0.0, abs=1e-12)
        assert br.penalty == 2.0

    def test_small_instance(self):
        assert collapsed_bp_objective([[1.0], [3.0]], [[1, 0], [1, 1]], 1.0).fit == pytest.approx(0.0, abs=1e-12)

    def test_duplicate_columns_rejected(self):
        with pytest.raises(SingularGramError):
            collapsed_bp_objective([[1.0], [3.0]], [[1, 1], [0, 0]], 1.0)

    @given(st.integers(1, 8), st.integers(1, 4), st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=100, deadline=None)
    def test_equals_bp_with_optimal_means(self, N, D, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(N, D))
        Z = random_distinct_allocation(rng, N, int(rng.integers(1, N + 1)))
        collapsed = collapsed_bp_objective(X, Z, 0.4)
        explicit = bp_means_objective(X, Z, optimal_means(X, Z), 0.4)
        assert collapsed.total == pytest.approx(explicit.total, rel=1e-10, abs=1e-12)


class TestKFeatures:
    def test_exact(self, rng):
        Z = np.array([[1, 1], [0, 1]])
        A = rng.normal(size=(2, 3))
        assert k_features_objective(Z @ A, Z, A) == pytest.approx(0.0, abs=1e-12)

    def test_all_zero(self):
        assert k_features_objective(np.zeros((3, 2)), np.zeros((3, 1)), np.ones((1, 2))) == 0.0

    def test_one_row_assigned(self):
        X = np.array([[-1.0], [1.0]])
        assert k_features_objective(X, [[0], [1]], [[1.0]]) == 1.0
        # no other column does better with its best mean
        for col in ([0, 0], [1, 0], [1, 1]):
            z = np.array(col)[:, None]
            best = optimal_means(X, z) if z.any() else np.zeros((1, 1))
            assert k_features_objective(X, z, best) >= 1.0

    def test_one_hot_matches_kmeans(self, rng):
        X = rng.normal(size=(7, 2))
        C = random_clustering(rng, 7, 3)
        A = rng.normal(size=(3, 2))
        kmeans = sum(np.sum((X[n] - A[np.argmax(C.Z[n])]) ** 2) for n in range(7))
        assert k_features_objective(X, C, A) == pytest.approx(kmeans, rel=1e-12)


class TestFiniteObjectives:
    def test_cluster_single(self):
        assert finite_cluster_objective(X2, [[1], [1]], [[1.0]], 3.0, capK=4).penalty == 0.0

    def test_cluster_cap_active(self, rng):
        X = rng.normal(size=(3, 1))
        assert finite_cluster_objective(X, np.eye(3, dtype=int), X, 1.0, capK=3).penalty == 2.0

    def test_cluster_cap_exceeded(self):
        with pytest.raises(ValueError):
            finite_cluster_objective(X2, np.eye(2, dtype=int), X2, 1.0, capK=1)

    def test_feature_empty(self):
        assert finite_feature_objective(X2, np.zeros((2, 0)), np.zeros((0, 1)), 1.0, capK=2).penalty == 0.0

    def test_feature_cap_active(self):
        assert finite_feature_objective(X2, np.eye(2, dtype=int), X2, 0.5, capK=2).penalty == 1.0

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_agree_with_unbounded(self, seed):
        rng = np.random.default_rng(seed)
        N = int(rng.integers(2, 8))
        X = rng.normal(size=(N, 2))
        C = random_clustering(rng, N, int(rng.integers(1, N + 1)))
        A = rng.normal(size=(C.K, 2))
        cap = C.K + int(rng.integers(0, 3))
        assert finite_cluster_objective(X, C, A, 0.8, cap) == dp_means_objective(X, C, A, 0.8)
        Z = (rng.random((N, 3)) < 0.5).astype(int)
        Af = rng.normal(size=(3, 2))
        Zk = Z[:, Z.sum(axis=0) > 0]
        Ak = Af[Z.sum(axis=0) > 0]
        assert finite_feature_objective(X, Zk, Ak, 0.8, 3) == bp_means_objective(X, Zk, Ak, 0.8)


class TestMahalanobis:
    def setup_method(self):
        rng = np.random.default_rng(5)
        self.X = np.vstack([rng.normal(size=(6, 2)), rng.normal(size=(5, 2)) + 4.0])
        self.C = Clustering.from_labels([0] * 6 + [1] * 5)
        self.A = np.array([self.X[:6].mean(axis=0), self.X[6:].mean(axis=0)])

    def test_identity_covariance(self):
        mp = MahalanobisParams((np.eye(2), np.eye(2)))
        br = mahalanobis_objective(self.X, self.C, self.A, mp, 2.0)
        assert br.fit == pytest.approx(dp_means_objective(self.X, self.C, self.A, 2.0).fit, rel=1e-12)
        assert br.penalty == pytest.approx(0.0, abs=1e-15)

    def test_scaled_identity(self):
        c, lam = 3.0, 0.7
        base = mahalanobis_objective(self.X, self.C, self.A, MahalanobisParams((np.eye(2), np.eye(2))), lam)
        scaled = mahalanobis_objective(self.X, self.C, self.A, MahalanobisParams((c * np.eye(2), c * np.eye(2))), lam)
        assert scaled.fit == pytest.approx(base.fit / c, rel=1e-12)
        assert scaled.penalty == pytest.approx(lam * 2 * 2 * np.log(c), rel=1e-12)

    def test_stationary_covariance_beats_scaled(self):
        lam = 1.5
        scatters = []
        for k in range(2):
            d = self.X[self.C.labels == k] - self.A[k]
            scatters.append(d.T @ d)

        def total(scale):
            mp = MahalanobisParams(tuple(scale * S / lam for S in scatters))
            return mahalanobis_objective(self.X, self.C, self.A, mp, lam).total

        assert total(1.0) < total(0.5)
        assert total(1.0) < total(2.0)

    def test_wrong_covariance_count(self):
        with pytest.raises(ValueError):
            mahalanobis_objective(self.X, self.C, self.A, MahalanobisParams((np.eye(2),)), 1.0)


class TestOptimalMeans:
    def test_identity(self, rng):
        X = rng.normal(size=(3, 2))
        np.testing.assert_allclose(optimal_means(X, np.eye(3, dtype=int)), X, atol=1e-14)

    def test_base_feature_is_mean(self, rng):
        X = rng.normal(size=(5, 3))
        np.testing.assert_allclose(optimal_means(X, np.ones((5, 1), dtype=int)), X.mean(axis=0, keepdims=True))

    def test_small_instance(self):
        np.testing.assert_allclose(optimal_means([[1.0], [3.0]], [[1, 0], [1, 1]]), [[1.0], [2.0]])

    def test_singular(self):
        with pytest.raises(SingularGramError):
            optimal_means([[1.0], [3.0]], [[1, 1], [0, 0]])

    def test_perturbations_do_not_improve(self, rng):
        X = rng.normal(size=(8, 3))
        Z = random_distinct_allocation(rng, 8, 3)
        A = optimal_means(X, Z)
        base = k_features_objective(X, Z, A)
        for _ in range(100):
            dA = rng.normal(size=A.shape)
            dA *= 1e-3 / np.linalg.norm(dA)
            assert k_features_objective(X, Z, A + dA) >= base - 1e-12


class TestGradient:
    def test_central_differences(self, rng):
        X = rng.normal(size=(6, 3))
        Z = (rng.random((6, 4)) < 0.5).astype(int)
        A = rng.normal(size=(4, 3))
        G = trace_fit_gradient(X, Z, A)
        h = 1e-6
        numeric = np.zeros_like(A)
        for idx in np.ndindex(*A.shape):
            E = np.zeros_like(A)
            E[idx] = h
            numeric[idx] = (k_features_objective(X, Z, A + E) - k_features_objective(X, Z, A - E)) / (2 * h)
        np.testing.assert_allclose(G, numeric, rtol=1e-6, atol=1e-6 * np.abs(G).max())

    def test_zero_at_optimum(self, rng):
        X = rng.normal(size=(6, 2))
        Z = random_distinct_allocation(rng, 6, 3)
        np.testing.assert_allclose(trace_fit_gradient(X, Z, optimal_means(X, Z)), 0.0, atol=1e-12)


class TestAsymptoticGap:
    X = np.array([[0.0, 0.0], [1.0, 0.0], [5.0, 5.0]])
    C = np.array([[1, 0], [1, 0], [0, 1]])
    Z = np.array([[1, 0], [1, 0], [1, 1]])
    grid = [1e-2, 1e-3, 1e-4, 1e-5]

    @pytest.mark.parametrize("model", ["crp", "ibp", "collapsed-crp", "collapsed-ibp"])
    def test_monotone_approach(self, model):
        kind = ModelKind(model)
        Z = self.C if kind.clustering else self.Z
        A = optimal_means(self.X, Z)
        gaps = [abs(r - 1.0) for _, r in asymptotic_gap(kind, self.X, Z, A, 1.0, self.grid)]
        assert all(b < a for a, b in zip(gaps, gaps[1:]))
        assert gaps[-1] < 1e-2

    def test_limiting_objective_dispatch(self):
        A = optimal_means(self.X, self.C)
        assert limiting_objective("crp", self.X, self.C, A, 1.0) == dp_means_objective(self.X, self.C, A, 1.0)
        assert limiting_objective("collapsed-ibp", self.X, self.Z, None, 1.0) == collapsed_bp_objective(self.X, self.Z, 1.0)

    def test_grid_must_decrease(self):
        with pytest.raises(ValueError):
            asymptotic_gap("crp", self.X, self.C, optimal_means(self.X, self.C), 1.0, [1e-3, 1e-2])

    def test_zero_limit_rejected(self):
        with pytest.raises(ValueError):
            asymptotic_gap("crp", [[1.0]], [[1]], [[1.0]], 1.0, [1e-2])

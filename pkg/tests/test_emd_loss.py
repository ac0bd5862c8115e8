import numpy as np
import pytest

from emd_loss import (
    ViewEmbedding,
    byol_vector_loss,
    cost_matrix,
    directional_loss,
    emd_loss,
    marginal_weights,
    marginal_weights_deepemd,
    similarity_score,
    solve_plan,
    symmetric_total_loss,
    uniform_weights,
)
from pyramid import PyramidSpec
from tensors import EmbeddingVector, FeatureMap, ShapeError


def _distinct_nodes(rng, n, c):
    """Rows with pairwise distinct directions and positive anchor products."""
    nodes = rng.normal(size=(n, c))
    nodes[:, 0] = np.abs(nodes[:, 0]) + 3.0
    return nodes


class TestCostAndMarginals:
    def test_cost_range_and_identity(self, rng):
        X = rng.normal(size=(6, 4))
        M = np.asarray(cost_matrix(X, X))
        assert M.min() >= 0.0 and M.max() <= 2.0
        np.testing.assert_allclose(np.diag(M), 0.0, atol=1e-12)

    def test_cost_invariant_to_positive_node_scaling(self, rng):
        X, Y = rng.normal(size=(6, 4)), rng.normal(size=(5, 4))
        alpha = rng.uniform(0.01, 100.0, size=(6, 1))
        beta = rng.uniform(0.01, 100.0, size=(5, 1))
        np.testing.assert_allclose(
            np.asarray(cost_matrix(X * alpha, Y * beta)), np.asarray(cost_matrix(X, Y)), atol=1e-12
        )

    def test_channel_mismatch(self, rng):
        with pytest.raises(ShapeError):
            cost_matrix(rng.normal(size=(3, 4)), rng.normal(size=(3, 5)))

    def test_weights_follow_anchor_products(self):
        nodes = np.array([[1.0, 0.0], [3.0, 0.0], [-1.0, 0.0]])
        w = np.asarray(marginal_weights(nodes, [1.0, 0.0]))
        raw = np.array([1.0, 3.0, 0.0]) + 1e-8
        np.testing.assert_allclose(w, raw / raw.sum())
        assert w.sum() == pytest.approx(1.0, abs=1e-12)

    def test_all_zero_weights_fall_back_to_uniform(self, caplog):
        nodes = np.array([[-1.0, 0.0], [-2.0, 0.0]])
        w = marginal_weights(nodes, [1.0, 0.0])
        np.testing.assert_allclose(np.asarray(w), [0.5, 0.5])
        assert "uniform" in caplog.text

    def test_mean_and_vector_modes_agree_for_constant_nodes(self, rng):
        X = rng.normal(size=(5, 3))
        y = rng.normal(size=3)
        Y = np.tile(y, (4, 1))
        np.testing.assert_allclose(
            np.asarray(marginal_weights_deepemd(X, Y)), np.asarray(marginal_weights(X, y)), rtol=1e-12
        )

    def test_uniform_weights(self):
        np.testing.assert_allclose(np.asarray(uniform_weights(4)), 0.25)
        with pytest.raises(ValueError):
            uniform_weights(0)


class TestEmdLoss:
    def test_bounds_on_random_inputs(self, rng):
        for _ in range(1000):
            n, m = (int(k) for k in rng.integers(1, 8, size=2))
            X, Y = rng.normal(size=(n, 4)), rng.normal(size=(m, 4))
            out = emd_loss(X, Y, rng.normal(size=4), rng.normal(size=4))
            raw = 2.0 - 2.0 * similarity_score(out.plan, out.cost)
            assert -1e-12 <= raw <= 4.0 + 1e-12
            assert out.emd_loss == pytest.approx(raw, abs=1e-12)
            assert 0.0 <= out.emd_loss <= 4.0

    def test_node_permutation_invariance(self, rng):
        for _ in range(20):
            X, Y = _distinct_nodes(rng, 6, 4), _distinct_nodes(rng, 5, 4)
            v_x, v_y = rng.normal(size=4), rng.normal(size=4)
            perm = rng.permutation(6)
            for solver in ("sinkhorn", "exact"):
                base = emd_loss(X, Y, v_x, v_y, solver=solver).emd_loss
                moved = emd_loss(X[perm], Y, v_x, v_y, solver=solver).emd_loss
                assert moved == pytest.approx(base, abs=1e-12)

    def test_orthogonal_anchors_match_uniform_marginals(self, rng):
        X = np.zeros((5, 3))
        Y = np.zeros((4, 3))
        X[:, :2] = rng.normal(size=(5, 2))
        Y[:, :2] = rng.normal(size=(4, 2))
        anchor = np.array([0.0, 0.0, 1.0])
        vector = emd_loss(X, Y, anchor, anchor, marginals="vector")
        uniform = emd_loss(X, Y, anchor, anchor, marginals="uniform")
        assert vector.emd_loss == uniform.emd_loss
        np.testing.assert_array_equal(np.asarray(vector.plan), np.asarray(uniform.plan))

    def test_identical_maps_exact_near_zero(self, rng):
        fmap = FeatureMap(_distinct_nodes(rng, 49, 16).reshape(7, 7, 16))
        vec = EmbeddingVector(np.eye(16)[0])
        out = emd_loss(fmap, fmap, vec, vec, solver="exact")
        assert out.emd_loss <= 1e-6

    def test_antipodal_is_four(self, rng):
        d = rng.normal(size=3)
        out = emd_loss(np.tile(d, (5, 1)), np.tile(-d, (4, 1)), d, -d)
        assert out.emd_loss == pytest.approx(4.0, abs=1e-9)

    def test_similarity_and_loss_identity(self, rng):
        X, Y = rng.normal(size=(6, 5)), rng.normal(size=(7, 5))
        out = emd_loss(X, Y, rng.normal(size=5), rng.normal(size=5))
        S = similarity_score(out.plan, out.cost)
        assert out.emd_loss == pytest.approx(2.0 - 2.0 * S)
        assert out.similarity == pytest.approx(S)

    def test_pyramid_node_counts(self, random_map, random_vector):
        out = emd_loss(random_map(), random_map(), random_vector(), random_vector(), pyramid=PyramidSpec())
        assert out.cost.n_rows == 83 and out.cost.n_cols == 83

    def test_pyramid_requires_feature_maps(self, rng):
        with pytest.raises(TypeError):
            emd_loss(rng.normal(size=(4, 2)), rng.normal(size=(4, 2)), np.ones(2), np.ones(2), pyramid=PyramidSpec((2,)))

    def test_unequal_node_counts(self, rng):
        out = emd_loss(rng.normal(size=(3, 4)), rng.normal(size=(9, 4)), np.ones(4), np.ones(4))
        assert out.plan.shape == (3, 9)

    def test_anchor_assignment(self, rng):
        X, Y = rng.normal(size=(4, 3)), rng.normal(size=(5, 3))
        v_x, v_y = rng.normal(size=3), rng.normal(size=3)
        _, _, r, c = solve_plan(X, Y, v_x, v_y)
        np.testing.assert_array_equal(np.asarray(r), np.asarray(marginal_weights(X, v_y)))
        np.testing.assert_array_equal(np.asarray(c), np.asarray(marginal_weights(Y, v_x)))

    def test_unknown_modes(self, rng):
        X = rng.normal(size=(2, 2))
        with pytest.raises(ValueError):
            emd_loss(X, X, np.ones(2), np.ones(2), marginals="area")
        with pytest.raises(ValueError):
            emd_loss(X, X, np.ones(2), np.ones(2), solver="lp")


class TestVectorAndSymmetric:
    def test_byol_vector_loss_range(self):
        assert byol_vector_loss([1.0, 0.0], [2.0, 0.0]) == pytest.approx(0.0)
        assert byol_vector_loss([1.0, 0.0], [-1.0, 0.0]) == pytest.approx(4.0)
        assert byol_vector_loss([0.0, 0.0], [1.0, 0.0]) == pytest.approx(2.0)

    def test_symmetric_total(self, random_map, random_vector):
        a = ViewEmbedding(random_map(), random_vector(), random_map(), random_vector())
        b = ViewEmbedding(random_map(), random_vector(), random_map(), random_vector())
        ab, ba = symmetric_total_loss(a, b, loss_mix=0.5)
        one = directional_loss(a, b, loss_mix=0.5)
        assert ab.total == pytest.approx(one.total)
        assert ab.total == pytest.approx(ab.emd_loss + 0.5 * ab.byol_vector_loss)
        assert 0.0 <= ba.emd_loss <= 4.0

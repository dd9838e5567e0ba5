import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from persimorph.encoders import Embedding
from persimorph.errors import DimMismatch, EmptyGallery, EmptyTrainSet, KTooLarge, LengthMismatch
from persimorph.evaluation import (
    LabeledEmbeddingSet,
    apportion_percent,
    complementarity,
    fuse,
    fuse_arrays,
    knn_classify,
    pca_aligned_pearson,
    recall_at_k,
    retrieve,
    rsa,
)


def clusters(rng, n_per, centres, spread=0.05):
    X = np.vstack([c + spread * rng.normal(size=(n_per, len(c))) for c in centres])
    y = np.repeat(np.arange(len(centres)), n_per)
    return X, y


class TestKnn:
    def test_k1_identical_point(self):
        train = LabeledEmbeddingSet([[1, 0], [0, 1], [-1, 0]], [0, 1, 2])
        res = knn_classify(train, LabeledEmbeddingSet([[0, 1]], [1]), k=1)
        assert res.predictions.tolist() == [1]
        assert res.accuracy == 100.0

    def test_separated_clusters(self):
        rng = np.random.default_rng(0)
        Xtr, ytr = clusters(rng, 30, [np.array([1.0, 0, 0]), np.array([0, 1.0, 0])])
        Xte, yte = clusters(rng, 10, [np.array([1.0, 0, 0]), np.array([0, 1.0, 0])])
        res = knn_classify(LabeledEmbeddingSet(Xtr, ytr), LabeledEmbeddingSet(Xte, yte), k=5)
        assert res.accuracy == 100.0

    def test_k_equals_train_gives_majority(self):
        rng = np.random.default_rng(1)
        train = LabeledEmbeddingSet(rng.normal(size=(7, 3)), [0, 1, 1, 2, 1, 0, 1])
        res = knn_classify(train, rng.normal(size=(5, 3)), k=7)
        assert res.predictions.tolist() == [1] * 5
        assert math.isnan(res.accuracy)

    def test_vote_tie_goes_to_closer_class(self):
        train = LabeledEmbeddingSet([[1.0, 0.1], [1.0, -0.5]], [1, 0])
        assert knn_classify(train, np.array([[1.0, 0.0]]), k=2).predictions[0] == 1

    def test_full_tie_goes_to_smaller_label(self):
        train = LabeledEmbeddingSet([[1.0, 0.5], [1.0, -0.5]], [1, 0])
        assert knn_classify(train, np.array([[1.0, 0.0]]), k=2).predictions[0] == 0

    def test_equal_distances_use_smaller_index(self):
        train = LabeledEmbeddingSet([[0.0, 1.0], [0.0, 1.0], [0.0, 1.0]], [2, 1, 0])
        assert knn_classify(train, np.array([[0.0, 1.0]]), k=1).predictions[0] == 2

    def test_euclidean_metric(self):
        train = LabeledEmbeddingSet([[1.0, 0.0], [10.0, 0.0]], [0, 1])
        assert knn_classify(train, np.array([[9.0, 0.0]]), k=1, metric="euclidean").predictions[0] == 1
        # cosine sees both training points as the same direction
        assert knn_classify(train, np.array([[9.0, 0.0]]), k=1).predictions[0] == 0

    def test_reordering_invariance(self):
        rng = np.random.default_rng(2)
        Xtr, ytr = clusters(rng, 15, [rng.normal(size=4) for _ in range(3)], spread=0.8)
        Xte = rng.normal(size=(20, 4))
        base = knn_classify(LabeledEmbeddingSet(Xtr, ytr), Xte, k=5).predictions
        for _ in range(5):
            p = rng.permutation(len(Xtr))
            q = rng.permutation(len(Xte))
            out = knn_classify(LabeledEmbeddingSet(Xtr[p], ytr[p]), Xte[q], k=5).predictions
            np.testing.assert_array_equal(out, base[q])

    def test_errors(self):
        train = LabeledEmbeddingSet([[1.0, 0.0]], [0])
        with pytest.raises(EmptyTrainSet):
            knn_classify(LabeledEmbeddingSet(np.zeros((0, 2)), []), np.zeros((1, 2)), k=1)
        with pytest.raises(KTooLarge):
            knn_classify(train, np.zeros((1, 2)), k=2)
        with pytest.raises(KTooLarge):
            knn_classify(train, np.zeros((1, 2)), k=0)
        with pytest.raises(DimMismatch):
            knn_classify(train, np.zeros((1, 3)), k=1)
        with pytest.raises(LengthMismatch):
            LabeledEmbeddingSet([[1.0]], [0, 1])


class TestFusion:
    def test_concat_dims(self):
        F, _ = fuse_arrays(np.ones((2, 16)), np.ones((2, 48)))
        assert F.shape == (2, 64)
        np.testing.assert_allclose(np.linalg.norm(F, axis=1), 1.0, rtol=1e-15)

    def test_weighted_add_w1(self):
        e = Embedding(np.array([3.0, 4.0]), False)
        out = fuse(e, Embedding(np.array([1.0, 1.0]), False), "weighted_add", weight=1.0)
        np.testing.assert_array_equal(out.values, [0.6, 0.8])
        assert out.normalized

    def test_cancellation(self):
        e = np.array([0.3, -0.2, 0.9])
        out = fuse(Embedding(e, True), Embedding(-e, True), "add")
        assert not out.values.any()
        assert out.normalized is False

    def test_add_dim_mismatch(self):
        with pytest.raises(DimMismatch):
            fuse_arrays(np.ones((1, 2)), np.ones((1, 3)), "add")
        F, _ = fuse_arrays(np.ones((1, 2)), np.ones((1, 3)), "add", pad=True)
        assert F.shape == (1, 3)

    def test_unknown_strategy(self):
        with pytest.raises(ValueError):
            fuse_arrays(np.ones((1, 2)), np.ones((1, 2)), "max")


class TestRetrieval:
    def test_own_pair_first(self):
        rng = np.random.default_rng(3)
        G = rng.normal(size=(6, 4))
        res = retrieve(G[2:3], G, top_k=3)
        assert res.ids[0, 0] == 2
        assert res.scores[0, 0] == pytest.approx(1.0, abs=1e-15)

    def test_orthogonal_ties_by_id(self):
        res = retrieve(np.array([[0.0, 0.0, 0.0, 1.0]]), np.eye(4)[:3], top_k=3)
        assert res.ids.tolist() == [[0, 1, 2]]
        assert res.scores.tolist() == [[0.0, 0.0, 0.0]]

    def test_custom_ids_tie_rule(self):
        res = retrieve(np.array([[1.0, 0.0]]), np.array([[1.0, 0.0], [1.0, 0.0]]), gallery_ids=[9, 4])
        assert res.ids.tolist() == [[4, 9]]

    def test_truncation(self):
        assert retrieve(np.ones((2, 3)), np.ones((2, 3)), top_k=10).ids.shape == (2, 2)

    def test_errors(self):
        with pytest.raises(EmptyGallery):
            retrieve(np.ones((1, 3)), np.zeros((0, 3)))
        with pytest.raises(DimMismatch):
            retrieve(np.ones((1, 2)), np.ones((2, 3)))

    def test_recall(self):
        rng = np.random.default_rng(4)
        G = rng.normal(size=(5, 3))
        res = retrieve(G, G, top_k=5)
        assert recall_at_k(res, np.arange(5), 1) == 100.0


class TestComplementarity:
    def test_hand_count(self):
        y = np.zeros(4, dtype=int)
        r = complementarity([0, 0, 1, 1], [0, 1, 0, 1], [0, 0, 0, 0], y)
        assert r.complementarity_score == 50.0
        assert r.both_correct_pct == 25.0 and r.both_wrong_pct == 25.0
        assert (r.rescue_count, r.hard_case_count, r.rescue_rate) == (1, 1, 100.0)
        assert (r.acc_tree, r.acc_image, r.acc_fused) == (50.0, 50.0, 100.0)
        assert r.gain == 50.0

    def test_all_correct(self):
        y = np.array([0, 1, 2])
        r = complementarity(y, y, y, y)
        assert r.complementarity_score == 0.0 and r.hard_case_count == 0

    @settings(max_examples=300, deadline=None)
    @given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=200))
    def test_percentages_sum_to_100(self, outcomes):
        y = np.zeros(len(outcomes), dtype=int)
        pt = np.array([0 if a else 1 for a, _ in outcomes])
        pi = np.array([0 if b else 1 for _, b in outcomes])
        r = complementarity(pt, pi, pt, y)
        assert r.complementarity_score + r.both_correct_pct + r.both_wrong_pct == 100.0
        assert 0.0 <= r.complementarity_score <= 100.0
        assert r.rescue_count <= r.hard_case_count

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.integers(0, 10**6), min_size=1, max_size=6))
    def test_apportion_close_to_exact(self, counts):
        shares = apportion_percent(counts)
        total = sum(counts)
        if total == 0:
            assert shares == [0.0] * len(counts)
            return
        assert sum(shares) == 100.0
        for c, s in zip(counts, shares):
            assert abs(Fraction(s) - Fraction(100 * c, total)) <= Fraction(1, 2**32)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            complementarity([0], [0, 1], [0], [0])

    def test_report_dict(self):
        rng = np.random.default_rng(5)
        E = rng.normal(size=(12, 4))
        r = complementarity([0] * 12, [0] * 12, [0] * 12, [0] * 12, E, E + 0.1 * rng.normal(size=E.shape),
                            n_perm=50)
        d = r.to_dict()
        assert d["metadata"]["n_permutations"] == 50
        assert 0 < d["rsa_p_value"] <= 1


class TestRepresentationSimilarity:
    def test_self_rsa_is_one(self):
        rng = np.random.default_rng(6)
        E = rng.normal(size=(20, 5))
        rho, p = rsa(E, E, n_perm=200, seed=1)
        assert rho == 1.0
        assert p == pytest.approx(1 / 201)

    def test_rsa_matches_scipy_spearman(self):
        from scipy.spatial.distance import pdist
        from scipy.stats import spearmanr

        rng = np.random.default_rng(7)
        A, B = rng.normal(size=(15, 4)), rng.normal(size=(15, 6))
        rho, _ = rsa(A, B, n_perm=0)
        assert rho == pytest.approx(spearmanr(pdist(A), pdist(B)).statistic, abs=1e-12)

    def test_permutation_seeded(self):
        rng = np.random.default_rng(8)
        A, B = rng.normal(size=(10, 3)), rng.normal(size=(10, 3))
        assert rsa(A, B, n_perm=100, seed=3) == rsa(A, B, n_perm=100, seed=3)

    def test_small_n(self):
        rho, p = rsa(np.ones((2, 2)), np.ones((2, 2)))
        assert math.isnan(rho) and math.isnan(p)

    def test_pearson_identical_and_rotated(self):
        rng = np.random.default_rng(9)
        E = rng.normal(size=(30, 4)) * np.array([4.0, 3.0, 2.0, 1.0])
        assert pca_aligned_pearson(E, E) == pytest.approx(1.0, abs=1e-12)
        Q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
        assert pca_aligned_pearson(E, E @ Q) == pytest.approx(1.0, abs=1e-9)

    def test_pearson_independent_is_small(self):
        rng = np.random.default_rng(10)
        assert pca_aligned_pearson(rng.normal(size=(500, 3)), rng.normal(size=(500, 3))) < 0.2

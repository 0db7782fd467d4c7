"""Datastore retrieval, softmax-weighted kNN, and the three inference modes."""

import numpy as np
import pytest

import oracles
from sqkit import (
    Datastore,
    EmbeddingMatrix,
    FrontendConfig,
    KnnConfig,
    ValidationError,
    build_datastore,
    domain_embedding_retrieval_predict,
    head_forward,
    init_alignnet,
    init_head,
    knn_predict,
    knn_weights,
    load_datastore,
    nearest_dataset_id,
    parametric_predict,
    pool_time,
    predict_split,
    retrieve_neighbors,
    save_datastore,
)
from test_training import FRONTEND, make_corpus


def line_datastore(values, scores, ids=None, kind="euclidean"):
    values = np.asarray(values, dtype=np.float64).reshape(-1, 1)
    ids = tuple(ids) if ids is not None else tuple(f"d{i}" for i in range(len(values)))
    return Datastore(embeddings=values, scores=np.asarray(scores, float), dataset_ids=ids, distance_kind=kind)


class TestBuildDatastore:
    def test_one_record_per_train_sample(self, tmp_path):
        corpus = make_corpus(tmp_path, "dsa", n_train=9, n_dev=3, seed=0)
        ds = build_datastore(FRONTEND, corpus)
        assert len(ds) == 9
        np.testing.assert_array_equal(ds.scores, [s.mos for s in corpus.samples("train")])
        assert set(ds.dataset_ids) == {"dsa"}

    def test_rebuild_is_identical(self, tmp_path):
        corpus = make_corpus(tmp_path, "dsb", seed=1)
        a = build_datastore(FRONTEND, corpus)
        b = build_datastore(FRONTEND, corpus)
        np.testing.assert_array_equal(a.embeddings, b.embeddings)

    def test_records_are_time_pooled_features(self, tmp_path):
        from sqkit import featurize

        corpus = make_corpus(tmp_path, "dsc", n_train=3, n_dev=3, seed=2)
        ds = build_datastore(FRONTEND, corpus)
        expected = pool_time(featurize(corpus.samples("train")[0], FRONTEND))
        np.testing.assert_array_equal(ds.embeddings[0], expected)

    def test_empty_split_rejected(self, tmp_path):
        corpus = make_corpus(tmp_path, "dsd", seed=3)
        with pytest.raises(ValueError, match="no samples"):
            build_datastore(FRONTEND, corpus, split="test")


class TestRetrieveNeighbors:
    def test_sorted_ascending_and_sized(self):
        ds = line_datastore([5.0, 1.0, 3.0, 2.0], [1, 2, 3, 4])
        ns = retrieve_neighbors(ds, np.array([0.0]), k=3)
        assert len(ns) == 3
        np.testing.assert_array_equal(ns.distances, [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(ns.scores, [2.0, 4.0, 3.0])

    def test_k_larger_than_store_rejected(self):
        ds = line_datastore([1.0, 2.0], [3, 4])
        with pytest.raises(ValidationError, match="exceeds"):
            retrieve_neighbors(ds, np.array([0.0]), k=3)

    def test_query_shape_checked(self):
        ds = line_datastore([1.0], [3])
        with pytest.raises(ValidationError):
            retrieve_neighbors(ds, np.zeros(2), k=1)

    def test_tie_break_ignores_record_order(self):
        # Two records at identical distance: the one with lower score wins
        # the slot no matter how the store is laid out.
        a = line_datastore([1.0, -1.0], [4.0, 2.0], ids=("p", "q"))
        b = line_datastore([-1.0, 1.0], [2.0, 4.0], ids=("q", "p"))
        na = retrieve_neighbors(a, np.array([0.0]), k=1)
        nb = retrieve_neighbors(b, np.array([0.0]), k=1)
        assert na.scores[0] == nb.scores[0] == 2.0
        assert na.dataset_ids == nb.dataset_ids == ("q",)


class TestKnnWeights:
    def test_sum_to_one_and_positive(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            d = rng.uniform(0, 10, size=rng.integers(1, 8))
            w = knn_weights(d, temperature=rng.uniform(0.1, 5))
            assert w.sum() == pytest.approx(1.0, abs=1e-9)
            assert np.all(w > 0)

    def test_matches_softmax_oracle(self):
        d = np.array([0.0, 1.0, 2.0])
        np.testing.assert_allclose(
            knn_weights(d, temperature=1.0), oracles.softmax_oracle([-0.0, -1.0, -2.0]), rtol=1e-12
        )

    def test_near_neighbors_weigh_more_by_default(self):
        w = knn_weights(np.array([0.0, 2.0]), temperature=1.0)
        assert w[0] > w[1]

    def test_paper_literal_reverses_the_preference(self):
        w = knn_weights(np.array([0.0, 2.0]), temperature=1.0, paper_literal=True)
        assert w[0] < w[1]

    def test_tiny_temperature_stays_finite(self):
        w = knn_weights(np.array([0.1, 5.0]), temperature=1e-9)
        assert np.all(np.isfinite(w))
        assert w[0] == pytest.approx(1.0)


class TestKnnPredict:
    def test_k1_returns_nearest_score(self):
        ds = line_datastore([0.0, 10.0], [2.0, 5.0])
        assert knn_predict(ds, np.array([1.0]), KnnConfig(k=1)) == 2.0

    def test_equidistant_pair_averages(self):
        ds = line_datastore([1.0, -1.0], [2.0, 4.0])
        assert knn_predict(ds, np.array([0.0]), KnnConfig(k=2)) == pytest.approx(3.0)

    def test_k3_matches_softmax_oracle(self):
        ds = line_datastore([0.0, 1.0, 2.0], [1.0, 3.0, 5.0])
        pred = knn_predict(ds, np.array([0.0]), KnnConfig(k=3, temperature=1.0))
        w = oracles.softmax_oracle([0.0, -1.0, -2.0])
        expected = w[0] * 1.0 + w[1] * 3.0 + w[2] * 5.0
        assert pred == pytest.approx(expected, rel=1e-12)

    def test_prediction_is_convex_combination(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            n = int(rng.integers(2, 10))
            ds = Datastore(
                embeddings=rng.normal(size=(n, 3)),
                scores=rng.uniform(1, 5, size=n),
                dataset_ids=tuple(f"d{i}" for i in range(n)),
            )
            k = int(rng.integers(1, n + 1))
            pred = knn_predict(ds, rng.normal(size=3), KnnConfig(k=k, temperature=rng.uniform(0.2, 3)))
            assert ds.scores.min() - 1e-12 <= pred <= ds.scores.max() + 1e-12

    def test_record_order_invariance(self):
        rng = np.random.default_rng(2)
        emb = rng.normal(size=(8, 2))
        emb[3] = emb[5]  # force a distance tie
        scores = rng.uniform(1, 5, size=8)
        ids = tuple(f"d{i}" for i in range(8))
        perm = rng.permutation(8)
        a = Datastore(embeddings=emb, scores=scores, dataset_ids=ids)
        b = Datastore(
            embeddings=emb[perm], scores=scores[perm], dataset_ids=tuple(ids[i] for i in perm)
        )
        q = rng.normal(size=2)
        cfg = KnnConfig(k=4, temperature=0.7)
        assert knn_predict(a, q, cfg) == knn_predict(b, q, cfg)

    def test_tiny_temperature_approaches_one_nearest_neighbor(self):
        ds = line_datastore([0.3, 1.0, 4.0], [1.5, 3.0, 4.5])
        q = np.array([0.0])
        soft = knn_predict(ds, q, KnnConfig(k=3, temperature=1e-6))
        hard = knn_predict(ds, q, KnnConfig(k=1))
        assert soft == pytest.approx(hard, abs=1e-6)

    def test_paper_literal_pulls_toward_far_scores(self):
        ds = line_datastore([0.0, 2.0], [1.0, 5.0])
        q = np.array([0.0])
        default = knn_predict(ds, q, KnnConfig(k=2, temperature=1.0))
        literal = knn_predict(ds, q, KnnConfig(k=2, temperature=1.0, paper_literal=True))
        assert default < 3.0 < literal


class TestCosineDistance:
    def test_orders_unit_vectors_by_angle(self):
        angles = np.array([0.1, 0.8, 2.0])
        emb = np.stack([np.cos(angles), np.sin(angles)], axis=1)
        ds = Datastore(
            embeddings=emb, scores=np.array([1.0, 2.0, 3.0]),
            dataset_ids=("a", "b", "c"), distance_kind="cosine",
        )
        ns = retrieve_neighbors(ds, np.array([1.0, 0.0]), k=3)
        assert ns.dataset_ids == ("a", "b", "c")
        assert np.all(np.diff(ns.distances) > 0)

    def test_zero_norm_record_gets_maximum_distance(self):
        emb = np.array([[0.0, 0.0], [1.0, 0.0]])
        ds = Datastore(
            embeddings=emb, scores=np.array([1.0, 5.0]),
            dataset_ids=("z", "u"), distance_kind="cosine",
        )
        ns = retrieve_neighbors(ds, np.array([1.0, 0.0]), k=2)
        assert ns.dataset_ids == ("u", "z")
        assert ns.distances[1] == 2.0

    def test_parallel_vectors_have_zero_distance(self):
        ds = Datastore(
            embeddings=np.array([[2.0, 0.0]]), scores=np.array([3.0]),
            dataset_ids=("a",), distance_kind="cosine",
        )
        ns = retrieve_neighbors(ds, np.array([0.5, 0.0]), k=1)
        assert ns.distances[0] == 0.0


class TestParametricPredict:
    def test_head_equals_forward_clip(self):
        rng = np.random.default_rng(3)
        params = init_head(4, 3, seed=0)
        mat = EmbeddingMatrix(frames=rng.normal(size=(5, 4)))
        assert parametric_predict(params, mat) == head_forward(params, mat).clipped

    def test_alignnet_without_dataset_id_rejected(self):
        params = init_alignnet(4, ("a",), seed=0, hidden=3, embed_dim=2, decoder_hidden=3)
        mat = EmbeddingMatrix(frames=np.zeros((2, 4)))
        with pytest.raises(ValidationError, match="dataset_id"):
            parametric_predict(params, mat)


class TestDomainRetrieval:
    def test_single_corpus_store_always_picks_it(self, tmp_path):
        corpus = make_corpus(tmp_path, "only", seed=4)
        ds = build_datastore(FRONTEND, corpus)
        assert nearest_dataset_id(ds, np.zeros(ds.dim)) == "only"

    def test_exact_match_query_picks_its_own_record(self):
        rng = np.random.default_rng(5)
        emb = rng.normal(size=(6, 3))
        ds = Datastore(
            embeddings=emb, scores=rng.uniform(1, 5, 6),
            dataset_ids=("a", "a", "b", "b", "c", "c"),
        )
        assert nearest_dataset_id(ds, emb[4]) == "c"

    def test_identical_table_rows_make_retrieval_irrelevant(self):
        rng = np.random.default_rng(6)
        params = init_alignnet(3, ("a", "b"), seed=1, hidden=4, embed_dim=2, decoder_hidden=3)
        params = params.with_arrays({"table": np.tile(params.table[0], (2, 1))})
        mat = EmbeddingMatrix(frames=rng.normal(size=(4, 3)))
        store_a = Datastore(
            embeddings=rng.normal(size=(2, 3)), scores=np.array([2.0, 4.0]), dataset_ids=("a", "a")
        )
        store_b = Datastore(
            embeddings=rng.normal(size=(2, 3)), scores=np.array([2.0, 4.0]), dataset_ids=("b", "b")
        )
        pred_a = domain_embedding_retrieval_predict(params, store_a, mat)
        pred_b = domain_embedding_retrieval_predict(params, store_b, mat)
        assert pred_a == pred_b


class TestPredictSplit:
    def test_parametric_matches_per_sample_loop(self, tmp_path):
        from sqkit import featurize

        corpus = make_corpus(tmp_path, "ps", n_train=6, n_dev=4, seed=7)
        params = init_head(6, 4, seed=2)
        pairs = predict_split(corpus, "dev", FRONTEND, None, params)
        expected = [
            parametric_predict(params, featurize(s, FRONTEND)) for s in corpus.samples("dev")
        ]
        np.testing.assert_array_equal(pairs.pred, expected)
        np.testing.assert_array_equal(pairs.true, [s.mos for s in corpus.samples("dev")])

    def test_knn_mode_needs_datastore(self, tmp_path):
        corpus = make_corpus(tmp_path, "psk", seed=8)
        params = init_head(6, 4, seed=0)
        with pytest.raises(ValidationError, match="datastore"):
            predict_split(corpus, "dev", FRONTEND, None, params, mode="knn")

    def test_domain_retrieval_needs_alignnet(self, tmp_path):
        corpus = make_corpus(tmp_path, "psd", seed=9)
        ds = build_datastore(FRONTEND, corpus)
        params = init_head(6, 4, seed=0)
        with pytest.raises(ValidationError, match="alignnet"):
            predict_split(corpus, "dev", FRONTEND, None, params, mode="domain-retrieval", datastore=ds)

    def test_unknown_mode_rejected(self, tmp_path):
        corpus = make_corpus(tmp_path, "psu", seed=10)
        params = init_head(6, 4, seed=0)
        with pytest.raises(ValidationError, match="unknown inference mode"):
            predict_split(corpus, "dev", FRONTEND, None, params, mode="oracle")

    def test_knn_predictions_stay_in_score_range(self, tmp_path):
        corpus = make_corpus(tmp_path, "psr", n_train=10, n_dev=6, seed=11)
        ds = build_datastore(FRONTEND, corpus)
        params = init_head(6, 4, seed=0)
        pairs = predict_split(
            corpus, "dev", FRONTEND, None, params, mode="knn",
            knn_config=KnnConfig(k=3), datastore=ds,
        )
        assert np.all(pairs.pred >= 1.0) and np.all(pairs.pred <= 5.0)


class TestDatastoreFiles:
    def test_round_trip_with_float32_quantization(self, tmp_path):
        rng = np.random.default_rng(12)
        ds = Datastore(
            embeddings=rng.normal(size=(5, 4)).astype(np.float32),
            scores=rng.uniform(1, 5, 5).astype(np.float32),
            dataset_ids=("x", "y", "x", "z", "y"),
            distance_kind="cosine",
        )
        path = tmp_path / "store.bin"
        save_datastore(path, ds)
        loaded = load_datastore(path)
        np.testing.assert_array_equal(loaded.embeddings, ds.embeddings)
        np.testing.assert_array_equal(loaded.scores, ds.scores)
        assert loaded.dataset_ids == ds.dataset_ids
        assert loaded.distance_kind == "cosine"

    def test_float64_store_survives_within_float32_precision(self, tmp_path):
        rng = np.random.default_rng(13)
        ds = Datastore(
            embeddings=rng.normal(size=(4, 3)),
            scores=rng.uniform(1, 5, 4),
            dataset_ids=("a", "b", "c", "d"),
        )
        path = tmp_path / "store64.bin"
        save_datastore(path, ds)
        loaded = load_datastore(path)
        np.testing.assert_allclose(loaded.embeddings, ds.embeddings, rtol=1e-6)
        np.testing.assert_allclose(loaded.scores, ds.scores, rtol=1e-6)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"WHAT" + b"\x00" * 30)
        with pytest.raises(ValidationError, match="not a datastore"):
            load_datastore(path)


class TestDatastoreValidation:
    def test_misaligned_fields_rejected(self):
        with pytest.raises(ValidationError):
            Datastore(embeddings=np.zeros((2, 3)), scores=np.zeros(3), dataset_ids=("a", "b"))

    def test_empty_store_rejected(self):
        with pytest.raises(ValidationError):
            Datastore(embeddings=np.zeros((0, 3)), scores=np.zeros(0), dataset_ids=())

    def test_bad_distance_kind_rejected(self):
        with pytest.raises(ValidationError):
            Datastore(
                embeddings=np.zeros((1, 2)), scores=np.zeros(1),
                dataset_ids=("a",), distance_kind="manhattan",
            )

    def test_knn_config_validation(self):
        with pytest.raises(ValidationError):
            KnnConfig(k=0)
        with pytest.raises(ValidationError):
            KnnConfig(temperature=0.0)

"""Embedding head and rating head tests, including composite gradient checks."""

import numpy as np
import pytest

from coldstart.bpmf import FactorSet
from coldstart.heads import (EmbeddingHead, RatingHead, clipped_rating_loss, embed_user,
                             embedding_loss, predict_rating_qembedding,
                             predict_rating_qrating)
from coldstart.numerics import DenseLayer

from test_numerics import finite_difference, relative_error


def make_embedding_head(seed=0):
    return EmbeddingHead.create(np.random.default_rng(seed))


def make_rating_head(seed=0, movie_count=40, mean_rating=3.58):
    rng = np.random.default_rng(seed)
    table = rng.normal(0, 0.3, size=(movie_count, 10))
    return RatingHead.create(rng, table, mean_rating)


class TestEmbedUser:
    def test_output_inside_tanh_range(self):
        head = make_embedding_head()
        rng = np.random.default_rng(1)
        for _ in range(10):
            out = embed_user(head, rng.random(200))
            assert out.shape == (10,)
            assert (np.abs(out) < 1.0).all()

    def test_zero_parameters_zero_output(self):
        head = EmbeddingHead(
            DenseLayer(200, 32, "relu", weights=np.zeros((32, 200)), bias=np.zeros(32)),
            DenseLayer(32, 32, "relu", weights=np.zeros((32, 32)), bias=np.zeros(32)),
            DenseLayer(32, 10, "tanh", weights=np.zeros((10, 32)), bias=np.zeros(10)))
        np.testing.assert_array_equal(embed_user(head, np.ones(200)), np.zeros(10))

    def test_inference_deterministic(self):
        head = make_embedding_head()
        state = np.random.default_rng(2).random(200)
        np.testing.assert_array_equal(embed_user(head, state), embed_user(head, state))

    def test_update_reduces_loss(self):
        head = make_embedding_head(seed=3)
        state = np.random.default_rng(4).random(200)
        target = np.full(10, 0.4)
        first = head.update(state, target, training=False)
        for _ in range(200):
            last = head.update(state, target, training=False)
        assert last < first


class TestEmbeddingLoss:
    def test_zero_at_equality(self):
        v = np.linspace(-0.5, 0.5, 10)
        assert embedding_loss(v, v) == 0.0

    def test_single_component_difference(self):
        a = np.zeros(10)
        b = np.zeros(10)
        b[3] = 0.1
        assert embedding_loss(a, b) == pytest.approx(0.001)

    def test_symmetric(self):
        rng = np.random.default_rng(5)
        a, b = rng.random(10), rng.random(10)
        assert embedding_loss(a, b) == embedding_loss(b, a)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            embedding_loss(np.zeros(10), np.zeros(9))


class TestPredictRatingQEmbedding:
    def test_zero_embedding_clips_to_floor(self, small_factors):
        assert predict_rating_qembedding(np.zeros(10), small_factors, 0) == 1.0

    def test_inside_range_passthrough(self):
        factors = FactorSet(user_factors=np.zeros((1, 2)),
                            movie_factors=np.array([[2.1, 0.0]]), user_scale=2.0)
        # embedding (1, 0) unscales to (2, 0); 2 * 2.1 = 4.2
        assert predict_rating_qembedding(np.array([1.0, 0.0]), factors, 0) \
            == pytest.approx(4.2)

    def test_reproduces_factor_prediction_for_scaled_target(self, small_factors,
                                                            small_split):
        from coldstart.bpmf import predict_rating, scaled_user_target
        user = sorted(small_split.train_users)[0]
        target = scaled_user_target(small_factors, user)
        for movie in (0, 3, 50):
            assert predict_rating_qembedding(target, small_factors, movie) == \
                pytest.approx(predict_rating(small_factors,
                                             small_factors.user_factors[user], movie))

    def test_vectorized_matches_scalar(self, small_factors):
        emb = np.random.default_rng(6).uniform(-1, 1, 10)
        movies = np.array([0, 5, 9])
        batch = predict_rating_qembedding(emb, small_factors, movies)
        for value, movie in zip(batch, movies):
            assert value == predict_rating_qembedding(emb, small_factors, int(movie))


class TestClippedRatingLoss:
    def test_overshoot_against_top_rating(self):
        assert clipped_rating_loss(5.7, 5) == 0.0

    def test_undershoot_against_bottom_rating(self):
        assert clipped_rating_loss(0.3, 1) == 0.0

    def test_interior_squared_error(self):
        assert clipped_rating_loss(3.0, 4) == 1.0

    def test_true_rating_validated(self):
        with pytest.raises(ValueError):
            clipped_rating_loss(3.0, 0)


class TestRatingHead:
    def test_zero_user_embedding_predicts_mean(self):
        head = make_rating_head()
        for layer in (head.user_stream.hidden1, head.user_stream.hidden2,
                      head.user_stream.output):
            layer.weights[:] = 0.0
            layer.bias[:] = 0.0
        value = predict_rating_qrating(head, np.ones(200), 3)
        assert value == pytest.approx(head.mean_rating)

    def test_inner_product_arithmetic(self):
        head = make_rating_head(mean_rating=3.58)
        # forge a deterministic user embedding of (1, 0, ..., 0)
        stream = head.user_stream
        stream.hidden1.weights[:] = 0.0
        stream.hidden1.bias[:] = 1.0
        stream.hidden2.weights[:] = 0.0
        stream.hidden2.bias[:] = 1.0
        stream.output.weights[:] = 0.0
        stream.output.bias[:] = 0.0
        stream.output.weights[0, 0] = 100.0  # tanh saturates to ~1
        head.movie_table[7] = 0.0
        head.movie_table[7, 0] = 0.5
        value = predict_rating_qrating(head, np.zeros(200), 7)
        assert value == pytest.approx(4.08, abs=1e-4)

    def test_unknown_movie(self):
        head = make_rating_head(movie_count=5)
        with pytest.raises(KeyError):
            head.predict(np.zeros(200), [5])

    def test_movie_table_initialized_from_factors_bitwise(self, small_factors):
        rng = np.random.default_rng(7)
        head = RatingHead.create(rng, small_factors.movie_factors, 3.5)
        np.testing.assert_array_equal(head.movie_table, small_factors.movie_factors)
        assert head.movie_table is not small_factors.movie_factors

    def test_first_update_changes_only_sampled_rows(self):
        head = make_rating_head(seed=8, movie_count=30)
        before = head.movie_table.copy()
        movies = np.array([2, 9, 9, 17])
        head.update(np.random.default_rng(9).random(200), movies,
                    np.array([4.0, 2.0, 5.0, 3.0]), rng=np.random.default_rng(10))
        changed = {m for m in range(30)
                   if not np.array_equal(before[m], head.movie_table[m])}
        assert changed == {2, 9, 17}

    def test_update_reduces_loss(self):
        head = make_rating_head(seed=11)
        state = np.random.default_rng(12).random(200)
        movies = np.arange(8)
        ratings = np.array([1, 2, 3, 4, 5, 4, 3, 2], dtype=float)
        first = head.update(state, movies, ratings, training=False)
        for _ in range(300):
            last = head.update(state, movies, ratings, training=False)
        assert last < first


class TestCompositeGradients:
    def test_embedding_head_matches_finite_differences(self):
        rng = np.random.default_rng(13)
        for trial in range(10):
            head = make_embedding_head(seed=trial)
            state = rng.random(200)
            target = rng.uniform(-0.8, 0.8, 10)

            def loss():
                return embedding_loss(head.forward(state), target)

            out, caches = head.forward_cache(state)
            grads = head.backward(caches, 2.0 * (out - target) / 10)
            fd = finite_difference(loss, head.params, h=1e-6)
            for g, f in zip(grads, fd):
                assert relative_error(g, f) < 1e-4

    def test_rating_head_matches_finite_differences(self):
        # full path: user stream, embedding lookup, inner product, clip, MSE
        rng = np.random.default_rng(14)
        for trial in range(10):
            head = make_rating_head(seed=trial + 20, movie_count=12)
            state = rng.random(200)
            movies = rng.integers(0, 12, size=6)
            ratings = rng.integers(1, 6, size=6).astype(float)

            def loss():
                return head.loss(state, movies, ratings)

            _, grads = head._loss_and_grads(state, movies, ratings, False, None)
            fd = finite_difference(loss, head.params, h=1e-6)
            for g, f in zip(grads, fd):
                assert relative_error(g, f) < 1e-4

    def test_clip_gates_gradient_outside_range(self):
        head = make_rating_head(seed=15, movie_count=4)
        state = np.random.default_rng(16).random(200)
        # push predictions far outside [1, 5] by inflating the table row
        head.movie_table[0] = 50.0
        raw = head.predict(state, [0])[0]
        if abs(raw - head.mean_rating) < 1.0:
            head.movie_table[0] = -50.0
            raw = head.predict(state, [0])[0]
        assert raw > 5.0 or raw < 1.0
        _, grads = head._loss_and_grads(state, [0], [3.0], False, None)
        table_grad = grads[-1]
        np.testing.assert_array_equal(table_grad, np.zeros_like(table_grad))


class TestBundlePredictionsClipped:
    def test_all_predictions_within_range(self, qrating_bundle, qembedding_bundle,
                                           small_dataset):
        rng = np.random.default_rng(17)
        movies = np.arange(small_dataset.movie_count)
        for bundle in (qrating_bundle, qembedding_bundle):
            for _ in range(5):
                state = rng.random(200)
                preds = bundle.predictor(state)(movies)
                assert (preds >= 1.0).all() and (preds <= 5.0).all()

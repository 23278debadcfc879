"""The two supervised heads over terminal interview states.

The embedding head maps a terminal state to a 10-dim user vector in the
tanh range, trained against scaled matrix-factor user targets. The rating
head predicts a rating directly: it embeds the user from the state, looks
the movie up in a trainable table warm-started from the matrix factors,
and outputs mean_rating + <user, movie> with a clip-to-[1,5] MSE loss.
"""

from __future__ import annotations

import numpy as np

from .bpmf import FactorSet
from .numerics import Adam, DenseLayer


class EmbeddingHead:
    """state (2k) -> 32 relu -> 32 relu -> 10 tanh, 0.5 dropout on hiddens."""

    def __init__(self, hidden1: DenseLayer, hidden2: DenseLayer, output: DenseLayer,
                 learning_rate: float = 1e-4):
        self.hidden1 = hidden1
        self.hidden2 = hidden2
        self.output = output
        self.adam = Adam(self.params, learning_rate=learning_rate)

    @classmethod
    def create(cls, rng: np.random.Generator, state_dim: int = 200, latent_dim: int = 10,
               learning_rate: float = 1e-4, dropout: float = 0.5) -> "EmbeddingHead":
        # dropout sits on the hidden activations (the consuming layer's
        # input side); the sparse interview state is never dropped
        return cls(
            DenseLayer(state_dim, 32, "relu", 0.0, rng=rng),
            DenseLayer(32, 32, "relu", dropout, rng=rng),
            DenseLayer(32, latent_dim, "tanh", dropout, rng=rng),
            learning_rate=learning_rate,
        )

    @property
    def params(self) -> list[np.ndarray]:
        return self.hidden1.params + self.hidden2.params + self.output.params

    @property
    def latent_dim(self) -> int:
        return self.output.out_dim

    def forward_cache(self, state: np.ndarray, training: bool = False,
                      rng: np.random.Generator | None = None):
        h1, c1 = self.hidden1.forward_cache(state, training=training, rng=rng)
        h2, c2 = self.hidden2.forward_cache(h1, training=training, rng=rng)
        out, c3 = self.output.forward_cache(h2, training=training, rng=rng)
        return out, (c1, c2, c3)

    def forward(self, state: np.ndarray, training: bool = False,
                rng: np.random.Generator | None = None) -> np.ndarray:
        out, _ = self.forward_cache(state, training=training, rng=rng)
        return out

    def backward(self, caches, grad_out: np.ndarray) -> list[np.ndarray]:
        c1, c2, c3 = caches
        g2, gw3, gb3 = self.output.backward(c3, grad_out)
        g1, gw2, gb2 = self.hidden2.backward(c2, g2)
        _, gw1, gb1 = self.hidden1.backward(c1, g1)
        return [gw1, gb1, gw2, gb2, gw3, gb3]

    def update(self, state: np.ndarray, target: np.ndarray,
               rng: np.random.Generator | None = None, training: bool = True) -> float:
        """One Adam step on the MSE between the embedding and its target."""
        out, caches = self.forward_cache(state, training=training, rng=rng)
        diff = out - target
        loss = float(np.mean(diff * diff))
        grads = self.backward(caches, 2.0 * diff / diff.size)
        self.adam.step(self.params, grads)
        return loss


def embed_user(head: EmbeddingHead, terminal_state: np.ndarray, training: bool = False,
               rng: np.random.Generator | None = None) -> np.ndarray:
    return head.forward(terminal_state, training=training, rng=rng)


def embedding_loss(predicted: np.ndarray, target: np.ndarray) -> float:
    predicted = np.asarray(predicted, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if predicted.shape != target.shape:
        raise ValueError("embedding/target shape mismatch")
    return float(np.mean((predicted - target) ** 2))


def predict_rating_qembedding(embedding: np.ndarray, factors: FactorSet, movie_index):
    """Unscale the head output by user_scale, dot with the movie factor, clip.

    Accepts one movie index (returns float) or an index array.
    """
    user_vector = np.asarray(embedding) * factors.user_scale
    if np.isscalar(movie_index) or np.ndim(movie_index) == 0:
        raw = float(user_vector @ factors.movie_factors[int(movie_index)])
        return float(np.clip(raw, 1.0, 5.0))
    raw = factors.movie_factors[np.asarray(movie_index, dtype=np.int64)] @ user_vector
    return np.clip(raw, 1.0, 5.0)


def clipped_rating_loss(predicted: float, true_rating: int) -> float:
    """Squared error after clipping the prediction into [1,5]."""
    if not 1 <= true_rating <= 5:
        raise ValueError(f"true rating {true_rating} outside 1..5")
    return float((np.clip(predicted, 1.0, 5.0) - true_rating) ** 2)


class RatingHead:
    """User stream + trainable movie table + additive mean rating."""

    def __init__(self, user_stream: EmbeddingHead, movie_table: np.ndarray,
                 mean_rating: float, learning_rate: float = 1e-4):
        self.user_stream = user_stream
        self.movie_table = np.array(movie_table, dtype=np.float64, copy=True)
        self.mean_rating = float(mean_rating)
        self.adam = Adam(self.params, learning_rate=learning_rate)

    @classmethod
    def create(cls, rng: np.random.Generator, movie_factors: np.ndarray, mean_rating: float,
               state_dim: int = 200, learning_rate: float = 1e-4,
               dropout: float = 0.5) -> "RatingHead":
        stream = EmbeddingHead.create(rng, state_dim=state_dim,
                                      latent_dim=movie_factors.shape[1],
                                      learning_rate=learning_rate, dropout=dropout)
        return cls(stream, movie_factors, mean_rating, learning_rate=learning_rate)

    @property
    def params(self) -> list[np.ndarray]:
        return self.user_stream.params + [self.movie_table]

    @property
    def movie_count(self) -> int:
        return self.movie_table.shape[0]

    def _check_movies(self, movie_indices: np.ndarray) -> np.ndarray:
        idx = np.asarray(movie_indices, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= self.movie_count):
            raise KeyError("movie index outside the embedding table")
        return idx

    def predict(self, terminal_state: np.ndarray, movie_indices, training: bool = False,
                rng: np.random.Generator | None = None) -> np.ndarray:
        """Unclipped predictions mean_rating + <user, movie> for each movie."""
        idx = self._check_movies(movie_indices)
        user = self.user_stream.forward(terminal_state, training=training, rng=rng)
        return self.mean_rating + self.movie_table[idx] @ user

    def _loss_and_grads(self, terminal_state, movie_indices, ratings, training, rng):
        idx = self._check_movies(movie_indices)
        ratings = np.asarray(ratings, dtype=np.float64)
        user, caches = self.user_stream.forward_cache(terminal_state,
                                                      training=training, rng=rng)
        rows = self.movie_table[idx]
        raw = self.mean_rating + rows @ user
        clipped = np.clip(raw, 1.0, 5.0)
        err = clipped - ratings
        loss = float(np.mean(err * err))

        # clamp subgradient: zero outside and exactly at the bounds
        gate = (raw > 1.0) & (raw < 5.0)
        d_raw = 2.0 * err * gate / err.size
        d_user = rows.T @ d_raw
        d_table = np.zeros_like(self.movie_table)
        np.add.at(d_table, idx, np.outer(d_raw, user))
        grads = self.user_stream.backward(caches, d_user) + [d_table]
        return loss, grads

    def loss(self, terminal_state, movie_indices, ratings, training: bool = False,
             rng: np.random.Generator | None = None) -> float:
        value, _ = self._loss_and_grads(terminal_state, movie_indices, ratings, training, rng)
        return value

    def update(self, terminal_state, movie_indices, ratings,
               rng: np.random.Generator | None = None, training: bool = True) -> float:
        """One Adam step on the clipped-MSE over the given (movie, rating) pairs."""
        loss, grads = self._loss_and_grads(terminal_state, movie_indices, ratings,
                                           training, rng)
        self.adam.step(self.params, grads)
        return loss


def predict_rating_qrating(head: RatingHead, terminal_state: np.ndarray, movie_index: int,
                           training: bool = False,
                           rng: np.random.Generator | None = None) -> float:
    """Single-movie unclipped prediction."""
    return float(head.predict(terminal_state, [movie_index], training=training, rng=rng)[0])

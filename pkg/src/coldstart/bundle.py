"""Model bundle: everything needed to interview a user and score movies.

One versioned checkpoint file carries the q-network, the head (either
variant), the matrix factors, the action space, the training config echo,
and the dataset digest, so stale or mismatched artifacts fail loudly.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import storage
from .bpmf import FactorSet
from .dqn import DqnParams
from .heads import EmbeddingHead, RatingHead, predict_rating_qembedding
from .interview import ActionSpace
from .numerics import DenseLayer

BUNDLE_FILE_VERSION = 1

Q_EMBEDDING = "q_embedding"
Q_RATING = "q_rating"


@dataclass
class ModelBundle:
    model: str
    dqn: DqnParams
    head: EmbeddingHead | RatingHead
    factors: FactorSet
    action_space: ActionSpace
    config: dict = field(default_factory=dict)
    best_test_rmse: float = float("inf")
    epoch_of_best: int = -1
    dataset_digest: str = ""

    def __post_init__(self):
        if self.model not in (Q_EMBEDDING, Q_RATING):
            raise ValueError(f"unknown model kind {self.model!r}")
        if self.model == Q_EMBEDDING and not isinstance(self.head, EmbeddingHead):
            raise TypeError("q_embedding bundle needs an EmbeddingHead")
        if self.model == Q_RATING and not isinstance(self.head, RatingHead):
            raise TypeError("q_rating bundle needs a RatingHead")

    @property
    def all_params(self) -> list[np.ndarray]:
        return self.dqn.params + self.head.params

    def parameter_hash(self) -> str:
        h = hashlib.sha256()
        for p in self.all_params:
            h.update(np.ascontiguousarray(p).tobytes())
        return h.hexdigest()

    def predictor(self, terminal_state: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
        """Clipped rating predictions over movie indices for one terminal state."""
        if self.model == Q_EMBEDDING:
            emb = self.head.forward(terminal_state, training=False)
            return lambda movies: np.atleast_1d(
                predict_rating_qembedding(emb, self.factors, movies))
        user = self.head.user_stream.forward(terminal_state, training=False)

        def scores(movies: np.ndarray) -> np.ndarray:
            idx = np.asarray(movies, dtype=np.int64)
            raw = self.head.mean_rating + self.head.movie_table[idx] @ user
            return np.clip(raw, 1.0, 5.0)

        return scores


def _layer_arrays(prefix: str, layer: DenseLayer) -> dict[str, np.ndarray]:
    return {f"{prefix}_w": layer.weights, f"{prefix}_b": layer.bias}


def _restore_layer(data, prefix: str, activation: str, dropout: float) -> DenseLayer:
    w = data[f"{prefix}_w"]
    return DenseLayer(w.shape[1], w.shape[0], activation, dropout,
                      weights=w, bias=data[f"{prefix}_b"])


def save_bundle(bundle: ModelBundle, path: str | Path) -> Path:
    path = Path(path)
    meta = {
        "model": bundle.model,
        "config": bundle.config,
        "best_test_rmse": bundle.best_test_rmse,
        "epoch_of_best": bundle.epoch_of_best,
        "dataset_digest": bundle.dataset_digest,
        "dqn_hidden_activation": bundle.dqn.layer1.activation,
        "dqn_learning_rate": bundle.dqn.adam.learning_rate,
        "head_learning_rate": bundle.head.adam.learning_rate,
    }
    arrays = {
        "version": np.asarray(BUNDLE_FILE_VERSION),
        "meta": storage.encode_json(meta),
        "action_space": np.asarray(bundle.action_space.movies, dtype=np.int64),
        "factors_user": bundle.factors.user_factors,
        "factors_movie": bundle.factors.movie_factors,
        "factors_scale": np.asarray(bundle.factors.user_scale),
        "factors_digest": np.asarray(bundle.factors.dataset_digest),
    }
    arrays.update(_layer_arrays("dqn1", bundle.dqn.layer1))
    arrays.update(_layer_arrays("dqn2", bundle.dqn.layer2))
    arrays.update(_layer_arrays("dqn3", bundle.dqn.output))

    if bundle.model == Q_EMBEDDING:
        stream = bundle.head
    else:
        stream = bundle.head.user_stream
        arrays["head_movie_table"] = bundle.head.movie_table
        arrays["head_mean_rating"] = np.asarray(bundle.head.mean_rating)
    arrays.update(_layer_arrays("head1", stream.hidden1))
    arrays.update(_layer_arrays("head2", stream.hidden2))
    arrays.update(_layer_arrays("head3", stream.output))

    storage.save_arrays(path, **arrays)
    return path


def load_bundle(path: str | Path) -> ModelBundle:
    data = storage.load_arrays(path)
    storage.check_version(path, int(data["version"]), BUNDLE_FILE_VERSION, "model bundle")
    meta = storage.decode_json(data["meta"])

    hidden_act = meta["dqn_hidden_activation"]
    dqn = DqnParams(
        _restore_layer(data, "dqn1", hidden_act, 0.0),
        _restore_layer(data, "dqn2", hidden_act, 0.5),
        _restore_layer(data, "dqn3", "relu", 0.5),
        learning_rate=meta["dqn_learning_rate"],
    )
    stream = EmbeddingHead(
        _restore_layer(data, "head1", "relu", 0.0),
        _restore_layer(data, "head2", "relu", 0.5),
        _restore_layer(data, "head3", "tanh", 0.5),
        learning_rate=meta["head_learning_rate"],
    )
    if meta["model"] == Q_EMBEDDING:
        head: EmbeddingHead | RatingHead = stream
    else:
        head = RatingHead(stream, data["head_movie_table"],
                          float(data["head_mean_rating"]),
                          learning_rate=meta["head_learning_rate"])

    movies = tuple(int(m) for m in data["action_space"])
    factors = FactorSet(
        user_factors=data["factors_user"],
        movie_factors=data["factors_movie"],
        user_scale=float(data["factors_scale"]),
        dataset_digest=str(data["factors_digest"]),
    )
    return ModelBundle(
        model=meta["model"],
        dqn=dqn,
        head=head,
        factors=factors,
        action_space=ActionSpace(movies=movies,
                                 position_of={m: i for i, m in enumerate(movies)}),
        config=meta["config"],
        best_test_rmse=meta["best_test_rmse"],
        epoch_of_best=meta["epoch_of_best"],
        dataset_digest=meta["dataset_digest"],
    )

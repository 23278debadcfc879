"""Training loops for both model variants.

Per epoch, every training user gets one epsilon-greedy interview. Rollouts
within a batch of users run against frozen parameters; the head then takes
one supervised step per user, the per-user inverse-RMSE reward is computed
with the freshly updated head, and the q-network takes a single batched
step on the collected (state, target) pairs. Test RMSE is evaluated each
epoch; when it stops improving for ``retrain_patience`` epochs the best
parameters are reloaded, epsilon resets to 1 and the q-network learning
rate drops to 1e-5.
"""

from __future__ import annotations

import copy
import csv
import logging
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .bpmf import FactorSet, scaled_user_target
from .bundle import ModelBundle, Q_EMBEDDING, Q_RATING, save_bundle
from .data import EvaluationSplit, RatingsDataset
from .dqn import DqnParams, EpsilonSchedule, build_targets, dqn_update, q_forward, select_action
from .evaluation import evaluate
from .heads import EmbeddingHead, RatingHead
from .interview import build_action_space, initial_state, asked_mask, simulate_answer, step

logger = logging.getLogger(__name__)

METRICS_HEADER = ["epoch", "test_rmse", "train_reward_mean", "epsilon", "dqn_lr", "wall_seconds"]

RMSE_FLOOR = 1e-6


@dataclass
class TrainConfig:
    model: str = Q_RATING
    questions: int = 3
    epochs: int = 100
    users_per_batch: int = 100
    gamma: float = 1.0
    epsilon_start: float = 1.0
    epsilon_decrement: float = 0.05
    epsilon_floor: float = 0.2
    dqn_learning_rate: float = 5e-4
    restart_learning_rate: float = 1e-5
    head_learning_rate: float = 1e-4
    retrain_patience: int = 50
    rating_pairs_per_interview: int = 32
    eval_stride: int = 1
    dqn_loss: str = "mse"
    reward_scope: str = "non_interviewed"  # or "all_observed"
    seed: int = 0

    def __post_init__(self):
        if self.model not in (Q_EMBEDDING, Q_RATING):
            raise ValueError(f"model must be {Q_EMBEDDING} or {Q_RATING}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.questions > 100:
            raise ValueError("interviews cannot exceed the 100-slot action space")
        if self.reward_scope not in ("non_interviewed", "all_observed"):
            raise ValueError("reward_scope must be non_interviewed or all_observed")

    def epsilon_schedule(self) -> EpsilonSchedule:
        return EpsilonSchedule(self.epsilon_start, self.epsilon_decrement, self.epsilon_floor)


@dataclass
class MetricsRow:
    epoch: int
    test_rmse: float
    train_reward_mean: float
    epsilon: float
    dqn_lr: float
    wall_seconds: float


@dataclass
class EpochStats:
    mean_reward: float
    interviews: int
    skipped: int
    mean_dqn_loss: float


class MetricsLog:
    """Append-only per-epoch records, flushed to disk row by row."""

    def __init__(self, path: str | Path | None = None):
        self.rows: list[MetricsRow] = []
        self._fh = None
        if path is not None:
            path = Path(path)
            path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(path, "w", encoding="utf-8", newline="")
            self._writer = csv.writer(self._fh)
            self._writer.writerow(METRICS_HEADER)
            self._fh.flush()

    def append(self, row: MetricsRow) -> None:
        if self.rows and row.epoch <= self.rows[-1].epoch:
            raise ValueError("metric epochs must be strictly increasing")
        self.rows.append(row)
        if self._fh is not None:
            self._writer.writerow([row.epoch, f"{row.test_rmse:.6f}",
                                   f"{row.train_reward_mean:.6f}", f"{row.epsilon:.4f}",
                                   f"{row.dqn_lr:.2e}", f"{row.wall_seconds:.3f}"])
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    @staticmethod
    def load(path: str | Path) -> list[MetricsRow]:
        rows = []
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            for rec in reader:
                rows.append(MetricsRow(
                    epoch=int(rec["epoch"]), test_rmse=float(rec["test_rmse"]),
                    train_reward_mean=float(rec["train_reward_mean"]),
                    epsilon=float(rec["epsilon"]), dqn_lr=float(rec["dqn_lr"]),
                    wall_seconds=float(rec["wall_seconds"])))
        return rows


def training_reward(dataset: RatingsDataset, user_index: int, asked_movies: set[int],
                    predict: Callable[[np.ndarray], np.ndarray],
                    scope: str = "non_interviewed") -> float | None:
    """Inverse RMSE of the head's predictions over the user's observed
    ratings, excluding interviewed movies. None when nothing is eligible."""
    rows = dataset.user_rows(user_index)
    movies = rows[:, 1]
    if scope == "non_interviewed" and asked_movies:
        keep = ~np.isin(movies, np.fromiter(asked_movies, dtype=np.int64))
        rows = rows[keep]
    if len(rows) == 0:
        return None
    predicted = predict(rows[:, 1])
    rmse = float(np.sqrt(np.mean((predicted - rows[:, 2].astype(np.float64)) ** 2)))
    return 1.0 / max(rmse, RMSE_FLOOR)


def _rollout(bundle: ModelBundle, dataset, split, user: int, k: int, eps: float,
             rng: np.random.Generator):
    """One train-mode interview against frozen parameters.

    Returns (states_before, q_vectors, slots, terminal_state, asked_movies).
    Action selection and the recorded q-values both use the deterministic
    inference forward; dropout only regularizes the update passes.
    """
    state = initial_state(bundle.action_space.size)
    states, qs, slots = [], [], []
    for _ in range(k):
        q = q_forward(bundle.dqn, state, training=False)
        slot = select_action(q, asked_mask(state), eps, rng)
        movie = bundle.action_space.movies[slot]
        rating = simulate_answer(dataset, split, user, movie, "train")
        states.append(state)
        qs.append(q)
        slots.append(slot)
        state = step(state, slot, rating)
    asked = {bundle.action_space.movies[s] for s in slots}
    return states, qs, slots, state, asked


def _head_update(bundle: ModelBundle, config: TrainConfig, dataset, user: int,
                 terminal: np.ndarray, rng: np.random.Generator) -> None:
    if bundle.model == Q_EMBEDDING:
        target = scaled_user_target(bundle.factors, user)
        bundle.head.update(terminal, target, rng=rng, training=True)
        return
    rows = dataset.user_rows(user)
    take = min(config.rating_pairs_per_interview, len(rows))
    picked = rows[rng.choice(len(rows), size=take, replace=False)]
    bundle.head.update(terminal, picked[:, 1], picked[:, 2].astype(np.float64),
                       rng=rng, training=True)


def train_epoch(bundle: ModelBundle, config: TrainConfig, dataset: RatingsDataset,
                split: EvaluationSplit, epoch_in_phase: int,
                rng: np.random.Generator) -> EpochStats:
    """One pass over all training users."""
    eps = config.epsilon_schedule().value(epoch_in_phase)
    users = np.fromiter(sorted(split.train_users), dtype=np.int64)
    users = users[rng.permutation(len(users))]

    rewards = []
    losses = []
    interviews = 0
    skipped = 0
    for lo in range(0, len(users), config.users_per_batch):
        batch = users[lo:lo + config.users_per_batch]
        rollouts = [_rollout(bundle, dataset, split, int(u), config.questions, eps, rng)
                    for u in batch]
        interviews += len(rollouts)

        batch_states, batch_targets = [], []
        for user, (states, qs, slots, terminal, asked) in zip(batch, rollouts):
            user = int(user)
            _head_update(bundle, config, dataset, user, terminal, rng)
            reward = training_reward(dataset, user, asked,
                                     bundle.predictor(terminal), config.reward_scope)
            if reward is None:
                skipped += 1
                continue
            rewards.append(reward)
            rmse = max(1.0 / reward, RMSE_FLOOR)
            batch_states.extend(states)
            batch_targets.extend(build_targets(slots, rmse, config.gamma, qs))

        if batch_states:
            losses.append(dqn_update(bundle.dqn, np.stack(batch_states),
                                     np.stack(batch_targets), rng=rng, training=True,
                                     loss_mode=config.dqn_loss))

    if skipped:
        logger.info("epoch skipped %d users with no eligible reward ratings", skipped)
    return EpochStats(mean_reward=float(np.mean(rewards)) if rewards else 0.0,
                      interviews=interviews, skipped=skipped,
                      mean_dqn_loss=float(np.mean(losses)) if losses else 0.0)


def initialize_bundle(config: TrainConfig, dataset: RatingsDataset,
                      factors: FactorSet, rng: np.random.Generator) -> ModelBundle:
    action_space = build_action_space(dataset)
    hidden = "relu" if config.model == Q_EMBEDDING else "tanh"
    dqn = DqnParams.create(rng, n_actions=action_space.size, hidden_activation=hidden,
                           learning_rate=config.dqn_learning_rate)
    if config.model == Q_EMBEDDING:
        head: EmbeddingHead | RatingHead = EmbeddingHead.create(
            rng, state_dim=2 * action_space.size, latent_dim=factors.latent_dim,
            learning_rate=config.head_learning_rate)
    else:
        head = RatingHead.create(rng, factors.movie_factors, dataset.global_mean,
                                 state_dim=2 * action_space.size,
                                 learning_rate=config.head_learning_rate)
    return ModelBundle(model=config.model, dqn=dqn, head=head, factors=factors,
                       action_space=action_space, config=asdict(config),
                       dataset_digest=dataset.digest())


def train(config: TrainConfig, dataset: RatingsDataset, split: EvaluationSplit,
          factors: FactorSet, *, checkpoint_dir: str | Path | None = None,
          metrics_path: str | Path | None = None,
          on_event: Callable[[str, dict], None] | None = None
          ) -> tuple[ModelBundle, MetricsLog]:
    """Full training run; returns the best-by-test-RMSE bundle and the log."""
    if factors.dataset_digest and factors.dataset_digest != dataset.digest():
        raise ValueError("factor checkpoint was built from a different dataset; "
                         "rerun bpmf-train")

    rng = np.random.default_rng(config.seed)
    bundle = initialize_bundle(config, dataset, factors, rng)
    metrics = MetricsLog(metrics_path)
    checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None

    best_state: tuple | None = None
    best_rmse = float("inf")
    epoch_of_best = -1
    stale = 0
    epoch_in_phase = 0
    last_rmse = float("nan")

    for epoch in range(config.epochs):
        started = time.perf_counter()
        eps = config.epsilon_schedule().value(epoch_in_phase)
        stats = train_epoch(bundle, config, dataset, split, epoch_in_phase, rng)

        evaluated = epoch % config.eval_stride == 0
        if evaluated:
            last_rmse = evaluate(bundle, dataset, split, config.questions).pooled_rmse
        wall = time.perf_counter() - started
        metrics.append(MetricsRow(epoch=epoch, test_rmse=last_rmse,
                                  train_reward_mean=stats.mean_reward, epsilon=eps,
                                  dqn_lr=bundle.dqn.adam.learning_rate,
                                  wall_seconds=wall))
        logger.info("epoch %d: test RMSE %.4f, mean reward %.4f, eps %.2f",
                    epoch, last_rmse, stats.mean_reward, eps)

        improved = evaluated and last_rmse < best_rmse
        if improved:
            best_rmse = last_rmse
            epoch_of_best = epoch
            best_state = (copy.deepcopy(bundle.dqn), copy.deepcopy(bundle.head))
            stale = 0
            if checkpoint_dir is not None:
                _checkpoint(bundle, best_rmse, epoch_of_best, checkpoint_dir / "best.npz")
            if on_event:
                on_event("improved", {"epoch": epoch, "test_rmse": last_rmse,
                                      "bundle": bundle})
        elif evaluated:
            stale += 1
        if checkpoint_dir is not None and (epoch + 1) % 25 == 0:
            _checkpoint(bundle, best_rmse, epoch_of_best, checkpoint_dir / "latest.npz")

        if stale >= config.retrain_patience and epoch + 1 < config.epochs:
            bundle.dqn = copy.deepcopy(best_state[0])
            bundle.head = copy.deepcopy(best_state[1])
            bundle.dqn.adam.learning_rate = config.restart_learning_rate
            epoch_in_phase = 0
            stale = 0
            logger.info("restart at epoch %d: reloaded best (RMSE %.4f), "
                        "epsilon reset, dqn lr %.0e", epoch, best_rmse,
                        config.restart_learning_rate)
            if on_event:
                on_event("restart", {"epoch": epoch, "bundle": bundle,
                                     "best_test_rmse": best_rmse})
        else:
            epoch_in_phase += 1

    if best_state is not None:
        bundle.dqn, bundle.head = best_state
    bundle.best_test_rmse = best_rmse
    bundle.epoch_of_best = epoch_of_best
    metrics.close()
    return bundle, metrics


def _checkpoint(bundle: ModelBundle, best_rmse: float, epoch_of_best: int,
                path: Path) -> None:
    bundle.best_test_rmse = best_rmse
    bundle.epoch_of_best = epoch_of_best
    save_bundle(bundle, path)

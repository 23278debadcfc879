"""Interview environment: action space, state encoding, answer simulation.

The state is a flat vector of length twice the action space. Slot ``i``
occupies two entries: ``values[2i]`` is the asked flag (0/1) and
``values[2i+1]`` encodes the answer as rating/5, so "haven't seen it"
(rating 0) stays distinct from every real rating (>= 0.2). Question order
is deliberately not encoded.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

from .data import EvaluationSplit, RatingsDataset

ACTION_SPACE_SIZE = 100

AnswerMode = Literal["train", "test"]


@dataclass(frozen=True)
class ActionSpace:
    """The movies the policy may ask about, most-rated first."""

    movies: tuple[int, ...]
    position_of: dict[int, int]

    @property
    def size(self) -> int:
        return len(self.movies)


def build_action_space(dataset: RatingsDataset, size: int = ACTION_SPACE_SIZE) -> ActionSpace:
    """Top ``size`` movies by rating count; ties break to the lower index."""
    if dataset.movie_count < size:
        raise ValueError(f"dataset has {dataset.movie_count} movies, need at least {size}")
    counts = dataset.rating_counts_per_movie
    order = np.lexsort((np.arange(dataset.movie_count), -counts))
    movies = tuple(int(m) for m in order[:size])
    return ActionSpace(movies=movies, position_of={m: i for i, m in enumerate(movies)})


def initial_state(n_actions: int = ACTION_SPACE_SIZE) -> np.ndarray:
    return np.zeros(2 * n_actions)


def asked_mask(state: np.ndarray) -> np.ndarray:
    return state[0::2] != 0.0


def asked_count(state: np.ndarray) -> int:
    return int(np.count_nonzero(state[0::2]))


def step(state: np.ndarray, action_slot: int, rating: int) -> np.ndarray:
    """New state with the slot marked asked and the answer encoded."""
    n_actions = state.shape[0] // 2
    if not 0 <= action_slot < n_actions:
        raise ValueError(f"action slot {action_slot} outside 0..{n_actions - 1}")
    if not 0 <= rating <= 5:
        raise ValueError(f"rating {rating} outside 0..5")
    if state[2 * action_slot] != 0.0:
        raise ValueError(f"slot {action_slot} was already asked")
    out = state.copy()
    out[2 * action_slot] = 1.0
    out[2 * action_slot + 1] = rating / 5.0
    return out


def simulate_answer(dataset: RatingsDataset, split: EvaluationSplit, user_index: int,
                    movie_index: int, mode: AnswerMode) -> int:
    """The simulated user's answer: their rating, or 0 when unrated.

    In test mode a movie from the held-out test set is treated as unwatched
    even if the user rated it, so interviews never leak evaluation targets.
    """
    if mode == "test" and movie_index in split.test_movies:
        return 0
    return dataset.rating_value(user_index, movie_index)


@dataclass(frozen=True)
class TrajectoryStep:
    state_before: np.ndarray
    action_slot: int
    rating: int
    state_after: np.ndarray


@dataclass(frozen=True)
class Trajectory:
    steps: tuple[TrajectoryStep, ...]

    @property
    def k(self) -> int:
        return len(self.steps)

    @property
    def terminal_state(self) -> np.ndarray:
        return self.steps[-1].state_after

    @property
    def action_slots(self) -> tuple[int, ...]:
        return tuple(s.action_slot for s in self.steps)


def run_interview(policy: Callable[[np.ndarray, np.ndarray], int],
                  answer_for: Callable[[int], int],
                  k: int, n_actions: int = ACTION_SPACE_SIZE) -> Trajectory:
    """Ask ``k`` distinct questions.

    ``policy(state, asked)`` returns the next slot; ``answer_for(slot)``
    returns the simulated rating 0..5.
    """
    if k > n_actions:
        raise ValueError(f"cannot ask {k} distinct questions with {n_actions} actions")
    state = initial_state(n_actions)
    steps = []
    for _ in range(k):
        asked = asked_mask(state)
        slot = int(policy(state, asked))
        if asked[slot]:
            raise ValueError(f"policy repeated slot {slot}")
        rating = int(answer_for(slot))
        nxt = step(state, slot, rating)
        steps.append(TrajectoryStep(state_before=state, action_slot=slot,
                                    rating=rating, state_after=nxt))
        state = nxt
    return Trajectory(steps=tuple(steps))

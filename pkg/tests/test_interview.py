"""Action space, state encoding and answer simulation tests."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coldstart import data, interview

from conftest import make_synthetic_dataset


class TestBuildActionSpace:
    def test_most_rated_first(self):
        triples = [(u + 1, 5, 3, u) for u in range(50)]  # movie 5 dominates
        for u in range(40):
            triples.append((u + 1, u % 4 + 1, 4, 100 + u))
        titles = {m: (f"M{m}", ()) for m in range(1, 6)}
        ds = data.build_dataset(np.asarray(triples, dtype=np.int64), titles)
        space = interview.build_action_space(ds, size=5)
        dense_of_5 = int(np.searchsorted(ds.movie_ids, 5))
        assert space.movies[0] == dense_of_5

    def test_tie_breaks_to_lower_index(self):
        triples = [(1, 1, 3, 0), (2, 1, 4, 1), (1, 2, 5, 2), (2, 2, 2, 3)]
        ds = data.build_dataset(np.asarray(triples, dtype=np.int64),
                                {1: ("A", ()), 2: ("B", ())})
        space = interview.build_action_space(ds, size=2)
        assert space.movies == (0, 1)

    def test_size_and_positions(self, small_dataset):
        space = interview.build_action_space(small_dataset)
        assert space.size == 100
        assert len(set(space.movies)) == 100
        for slot, movie in enumerate(space.movies):
            assert space.position_of[movie] == slot
        counts = small_dataset.rating_counts_per_movie[list(space.movies)]
        assert all(counts[i] >= counts[i + 1] for i in range(99))

    def test_too_few_movies(self):
        triples = np.asarray([(1, 1, 3, 0), (1, 2, 4, 0)], dtype=np.int64)
        ds = data.build_dataset(triples, {1: ("A", ()), 2: ("B", ())})
        with pytest.raises(ValueError, match="at least 100"):
            interview.build_action_space(ds)


class TestState:
    def test_initial_all_zero(self):
        state = interview.initial_state()
        assert state.shape == (200,)
        assert not state.any()
        assert interview.asked_count(state) == 0

    def test_step_encodes_slot_and_rating(self):
        state = interview.step(interview.initial_state(), 7, 5)
        assert state[14] == 1.0
        assert state[15] == 1.0
        assert interview.asked_count(state) == 1

    def test_step_unseen_answer(self):
        state = interview.step(interview.initial_state(), 7, 0)
        assert state[14] == 1.0
        assert state[15] == 0.0

    def test_step_does_not_mutate_input(self):
        initial = interview.initial_state()
        interview.step(initial, 3, 4)
        assert not initial.any()

    def test_repeated_slot_rejected(self):
        state = interview.step(interview.initial_state(), 7, 3)
        with pytest.raises(ValueError, match="already asked"):
            interview.step(state, 7, 4)

    def test_rating_range(self):
        with pytest.raises(ValueError, match="rating"):
            interview.step(interview.initial_state(), 0, 6)

    @given(st.lists(st.tuples(st.integers(0, 99), st.integers(0, 5)),
                    min_size=1, max_size=10, unique_by=lambda p: p[0]),
           st.randoms(use_true_random=False))
    @settings(max_examples=60, deadline=None)
    def test_order_invariance(self, pairs, rnd):
        forward = interview.initial_state()
        for slot, rating in pairs:
            forward = interview.step(forward, slot, rating)
        shuffled = list(pairs)
        rnd.shuffle(shuffled)
        backward = interview.initial_state()
        for slot, rating in shuffled:
            backward = interview.step(backward, slot, rating)
        np.testing.assert_array_equal(forward, backward)

    def test_popcount_tracks_steps(self):
        state = interview.initial_state()
        for t, slot in enumerate([3, 17, 41, 99], start=1):
            state = interview.step(state, slot, t % 6)
            assert interview.asked_count(state) == t


@pytest.fixture(scope="module")
def world():
    ds = make_synthetic_dataset(n_users=60, n_movies=110, seed=31)
    return ds, data.make_split(ds, seed=32)


class TestSimulateAnswer:

    def test_train_mode_reveals_rating(self, world):
        ds, split = world
        u, m, r, _ = ds.ratings[0]
        assert interview.simulate_answer(ds, split, int(u), int(m), "train") == r

    def test_unrated_movie_answers_zero(self, world):
        ds, split = world
        rated = set(ds.user_rows(0)[:, 1].tolist())
        unrated = next(m for m in range(ds.movie_count) if m not in rated)
        assert interview.simulate_answer(ds, split, 0, unrated, "train") == 0
        assert interview.simulate_answer(ds, split, 0, unrated, "test") == 0

    def test_test_mode_masks_test_movies_exhaustively(self, world):
        ds, split = world
        for u in range(ds.user_count):
            for m, r in data.ratings_of(ds, u):
                answer = interview.simulate_answer(ds, split, u, m, "test")
                if m in split.test_movies:
                    assert answer == 0
                else:
                    assert answer == r

    def test_test_mode_interview_movie_passthrough(self, world):
        ds, split = world
        for u, m, r, _ in ds.ratings:
            if int(m) in split.interview_movies:
                assert interview.simulate_answer(ds, split, int(u), int(m), "test") == r
                break


class TestRunInterview:
    def test_k_steps_distinct(self):
        trajectory = interview.run_interview(
            policy=lambda state, asked: int(np.flatnonzero(~asked)[0]),
            answer_for=lambda slot: slot % 6, k=3)
        assert trajectory.k == 3
        assert len(set(trajectory.action_slots)) == 3
        assert interview.asked_count(trajectory.terminal_state) == 3

    def test_four_questions_supported(self):
        trajectory = interview.run_interview(
            policy=lambda state, asked: int(np.flatnonzero(~asked)[0]),
            answer_for=lambda slot: 1, k=4)
        assert trajectory.k == 4

    def test_constant_policy_must_not_repeat(self):
        # a policy that ignores the mask trips the repeat guard
        with pytest.raises(ValueError, match="repeated"):
            interview.run_interview(policy=lambda state, asked: 0,
                                    answer_for=lambda slot: 1, k=2)

    def test_states_chain(self):
        trajectory = interview.run_interview(
            policy=lambda state, asked: int(np.flatnonzero(~asked)[0]),
            answer_for=lambda slot: 2, k=3)
        for i, step_ in enumerate(trajectory.steps):
            if i:
                np.testing.assert_array_equal(step_.state_before,
                                              trajectory.steps[i - 1].state_after)
        np.testing.assert_array_equal(trajectory.terminal_state,
                                      trajectory.steps[-1].state_after)

    def test_k_too_large(self):
        with pytest.raises(ValueError, match="distinct"):
            interview.run_interview(lambda s, a: 0, lambda s: 1, k=101)

"""MovieLens 1M ingestion, dense reindexing, and evaluation splits.

The raw distribution keys users and movies by sparse identifiers; every
downstream structure (action space, factor matrices, embedding tables) is
index-addressed, so both axes are remapped to dense 0-based indices at load
time and the mapping is persisted alongside the dataset cache.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import storage

logger = logging.getLogger(__name__)

DATASET_CACHE_VERSION = 1
SPLIT_FILE_VERSION = 1


class DatasetError(ValueError):
    """Malformed or inconsistent ratings data."""


@dataclass
class RatingsDataset:
    """Remapped ratings plus per-movie metadata.

    ``ratings`` is an (n, 4) int64 array of
    (user_index, movie_index, rating, timestamp) rows, sorted by
    (user_index, movie_index). Treat instances as immutable once built.
    """

    user_count: int
    movie_count: int
    ratings: np.ndarray
    global_mean: float
    movie_titles: dict[int, tuple[str, tuple[str, ...]]]
    rating_counts_per_movie: np.ndarray
    user_ids: np.ndarray   # dense user_index -> original id
    movie_ids: np.ndarray  # dense movie_index -> original id
    _user_offsets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        # rows arrive sorted by (user, movie); offsets give O(1) per-user slices
        users = self.ratings[:, 0]
        self._user_offsets = np.searchsorted(users, np.arange(self.user_count + 1))

    def user_rows(self, user_index: int) -> np.ndarray:
        if not 0 <= user_index < self.user_count:
            raise KeyError(f"unknown user index {user_index}")
        lo, hi = self._user_offsets[user_index], self._user_offsets[user_index + 1]
        return self.ratings[lo:hi]

    def rating_value(self, user_index: int, movie_index: int) -> int:
        """The user's rating of a movie, or 0 if unrated."""
        rows = self.user_rows(user_index)
        pos = np.searchsorted(rows[:, 1], movie_index)
        if pos < len(rows) and rows[pos, 1] == movie_index:
            return int(rows[pos, 2])
        return 0

    def digest(self) -> str:
        return storage.array_digest(self.ratings)


def _parse_dat_line(line: str, path: str, lineno: int, n_fields: int) -> list[str]:
    parts = line.rstrip("\n").split("::")
    if len(parts) != n_fields:
        raise DatasetError(
            f"{path}:{lineno}: expected {n_fields} '::'-separated fields, got {len(parts)}"
        )
    return parts


def load_movielens(ratings_path: str | Path, movies_path: str | Path) -> RatingsDataset:
    """Parse `ratings.dat` + `movies.dat` and build a dense-indexed dataset.

    Only movies that actually appear in the ratings are kept; titles are
    transcoded from the distribution's ISO-8859-1 to str.
    """
    ratings_path, movies_path = Path(ratings_path), Path(movies_path)

    raw = []
    seen_pairs = set()
    with open(ratings_path, "r", encoding="iso-8859-1") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = _parse_dat_line(line, str(ratings_path), lineno, 4)
            try:
                user, movie, rating, ts = (int(p) for p in parts)
            except ValueError as exc:
                raise DatasetError(f"{ratings_path}:{lineno}: non-integer field") from exc
            if not 1 <= rating <= 5:
                raise DatasetError(f"{ratings_path}:{lineno}: rating {rating} outside 1..5")
            if (user, movie) in seen_pairs:
                raise DatasetError(
                    f"{ratings_path}:{lineno}: duplicate rating for user {user}, movie {movie}"
                )
            seen_pairs.add((user, movie))
            raw.append((user, movie, rating, ts))
    if not raw:
        raise DatasetError(f"{ratings_path}: no ratings found")

    titles: dict[int, tuple[str, tuple[str, ...]]] = {}
    with open(movies_path, "r", encoding="iso-8859-1") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            movie_id_s, title, genres = _parse_dat_line(line, str(movies_path), lineno, 3)
            try:
                movie_id = int(movie_id_s)
            except ValueError as exc:
                raise DatasetError(f"{movies_path}:{lineno}: non-integer movie id") from exc
            titles[movie_id] = (title, tuple(g for g in genres.split("|") if g))

    triples = np.asarray(raw, dtype=np.int64)
    return build_dataset(triples, titles)


def build_dataset(raw_triples: np.ndarray,
                  raw_titles: dict[int, tuple[str, tuple[str, ...]]]) -> RatingsDataset:
    """Assemble a RatingsDataset from (user_id, movie_id, rating, ts) rows
    keyed by original identifiers."""
    triples = np.asarray(raw_triples, dtype=np.int64)
    user_ids, user_idx = np.unique(triples[:, 0], return_inverse=True)
    movie_ids, movie_idx = np.unique(triples[:, 1], return_inverse=True)

    pair_keys = user_idx.astype(np.int64) * len(movie_ids) + movie_idx
    if len(np.unique(pair_keys)) != len(pair_keys):
        raise DatasetError("duplicate (user, movie) rating pair")
    if triples[:, 2].min() < 1 or triples[:, 2].max() > 5:
        raise DatasetError("rating outside 1..5")

    missing = [int(m) for m in movie_ids if int(m) not in raw_titles]
    if missing:
        raise DatasetError(f"rated movies missing from the movies file: {missing[:5]}...")

    remapped = np.column_stack([user_idx, movie_idx, triples[:, 2], triples[:, 3]])
    order = np.lexsort((remapped[:, 1], remapped[:, 0]))
    remapped = remapped[order]

    counts = np.bincount(remapped[:, 1], minlength=len(movie_ids)).astype(np.int64)
    movie_titles = {i: raw_titles[int(mid)] for i, mid in enumerate(movie_ids)}
    dataset = RatingsDataset(
        user_count=len(user_ids),
        movie_count=len(movie_ids),
        ratings=remapped,
        global_mean=float(remapped[:, 2].mean()),
        movie_titles=movie_titles,
        rating_counts_per_movie=counts,
        user_ids=user_ids,
        movie_ids=movie_ids,
    )
    logger.info("dataset: %d users, %d movies, %d ratings, mean %.4f",
                dataset.user_count, dataset.movie_count, len(remapped), dataset.global_mean)
    return dataset


def ratings_of(dataset: RatingsDataset, user_index: int,
               restrict_to=None) -> list[tuple[int, int]]:
    """(movie_index, rating) pairs for one user, sorted by movie_index,
    optionally filtered to a movie set."""
    rows = dataset.user_rows(user_index)
    pairs = [(int(m), int(r)) for m, r in zip(rows[:, 1], rows[:, 2])]
    if restrict_to is not None:
        pairs = [(m, r) for m, r in pairs if m in restrict_to]
    return pairs


@dataclass(frozen=True)
class EvaluationSplit:
    """75/25 user partition plus the global interview/test movie partition."""

    train_users: frozenset[int]
    test_users: frozenset[int]
    interview_movies: frozenset[int]
    test_movies: frozenset[int]
    seed: int


def make_split(dataset: RatingsDataset, user_fraction: float = 0.75,
               movie_fraction: float = 0.75, seed: int = 0) -> EvaluationSplit:
    """Seeded shuffle-and-prefix partition of users and movies."""
    if not (0.0 < user_fraction < 1.0 and 0.0 < movie_fraction < 1.0):
        raise ValueError("fractions must lie strictly inside (0,1)")
    if dataset.user_count < 2 or dataset.movie_count < 2:
        raise ValueError("need at least 2 users and 2 movies to split")

    rng = np.random.default_rng(seed)
    users = rng.permutation(dataset.user_count)
    movies = rng.permutation(dataset.movie_count)
    n_train = int(dataset.user_count * user_fraction)
    n_interview = int(dataset.movie_count * movie_fraction)
    return EvaluationSplit(
        train_users=frozenset(int(u) for u in users[:n_train]),
        test_users=frozenset(int(u) for u in users[n_train:]),
        interview_movies=frozenset(int(m) for m in movies[:n_interview]),
        test_movies=frozenset(int(m) for m in movies[n_interview:]),
        seed=seed,
    )


def save_dataset(dataset: RatingsDataset, path: str | Path) -> Path:
    """Write the versioned dataset cache plus the `<stem>.mapping.json`
    index-mapping file. Returns the cache path."""
    path = Path(path)
    title_rows = np.asarray(
        [[dataset.movie_titles[i][0], "|".join(dataset.movie_titles[i][1])]
         for i in range(dataset.movie_count)])
    storage.save_arrays(
        path,
        version=np.asarray(DATASET_CACHE_VERSION),
        ratings=dataset.ratings,
        user_ids=dataset.user_ids,
        movie_ids=dataset.movie_ids,
        titles=title_rows,
        rating_counts=dataset.rating_counts_per_movie,
    )
    mapping = {
        "users": {str(orig): i for i, orig in enumerate(dataset.user_ids.tolist())},
        "movies": {str(orig): i for i, orig in enumerate(dataset.movie_ids.tolist())},
    }
    mapping_path = path.with_suffix(".mapping.json")
    mapping_path.write_text(json.dumps(mapping, sort_keys=True), encoding="utf-8")
    return path


def load_dataset(path: str | Path) -> RatingsDataset:
    data = storage.load_arrays(path)
    storage.check_version(path, int(data["version"]), DATASET_CACHE_VERSION, "dataset cache")
    titles = {
        i: (str(row[0]), tuple(g for g in str(row[1]).split("|") if g))
        for i, row in enumerate(data["titles"])
    }
    ratings = data["ratings"]
    return RatingsDataset(
        user_count=len(data["user_ids"]),
        movie_count=len(data["movie_ids"]),
        ratings=ratings,
        global_mean=float(ratings[:, 2].mean()),
        movie_titles=titles,
        rating_counts_per_movie=data["rating_counts"],
        user_ids=data["user_ids"],
        movie_ids=data["movie_ids"],
    )


def save_split(split: EvaluationSplit, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "version": SPLIT_FILE_VERSION,
        "seed": split.seed,
        "train_users": sorted(split.train_users),
        "test_users": sorted(split.test_users),
        "interview_movies": sorted(split.interview_movies),
        "test_movies": sorted(split.test_movies),
    }
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path


def load_split(path: str | Path) -> EvaluationSplit:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    storage.check_version(path, payload.get("version", -1), SPLIT_FILE_VERSION, "split")
    return EvaluationSplit(
        train_users=frozenset(payload["train_users"]),
        test_users=frozenset(payload["test_users"]),
        interview_movies=frozenset(payload["interview_movies"]),
        test_movies=frozenset(payload["test_movies"]),
        seed=payload["seed"],
    )

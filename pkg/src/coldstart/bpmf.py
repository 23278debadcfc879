"""Bayesian matrix factorization via Gibbs sampling.

Produces the 10-dimensional user and movie factors that supervise the
embedding head and warm-start the rating head's movie table. Ratings are
modeled raw (1..5, no mean-centering); predictions are u.v clipped to [1,5].
Factors are posterior means (averages of post-burn-in samples).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular

from . import storage
from .data import RatingsDataset
from .numerics import cholesky, sample_mvn_from_precision, sample_wishart

logger = logging.getLogger(__name__)

FACTORS_FILE_VERSION = 1


@dataclass
class BpmfConfig:
    latent_dim: int = 10
    gibbs_iterations: int = 200
    burn_in: int = 50
    prior_mean: float = 0.0        # Normal-Wishart mu0 (broadcast over dims)
    prior_scale: float = 2.0       # Normal-Wishart beta0
    wishart_dof: int | None = None  # nu0; defaults to latent_dim
    obs_precision: float = 2.0     # rating noise precision
    init_noise: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.burn_in >= self.gibbs_iterations:
            raise ValueError("burn_in must be smaller than gibbs_iterations")
        if self.wishart_dof is not None and self.wishart_dof < self.latent_dim:
            raise ValueError("wishart_dof must be at least latent_dim")

    @property
    def dof(self) -> int:
        return self.latent_dim if self.wishart_dof is None else self.wishart_dof


@dataclass
class FactorSet:
    """Averaged Gibbs factors. ``user_scale`` is the max absolute user-factor
    entry; dividing by it maps every user factor into the tanh output range."""

    user_factors: np.ndarray
    movie_factors: np.ndarray
    user_scale: float
    dataset_digest: str = ""

    @property
    def latent_dim(self) -> int:
        return self.user_factors.shape[1]


def _sample_hyperparams(features: np.ndarray, cfg: BpmfConfig, rng: np.random.Generator):
    """Normal-Wishart posterior draw of (mean, precision) given a factor matrix."""
    n, d = features.shape
    x_bar = features.mean(axis=0)
    centered = features - x_bar
    s_bar = centered.T @ centered / n
    mu0 = np.full(d, cfg.prior_mean)
    diff = x_bar - mu0

    beta_post = cfg.prior_scale + n
    dof_post = cfg.dof + n
    scale_inv = (np.eye(d) + n * s_bar
                 + (cfg.prior_scale * n / beta_post) * np.outer(diff, diff))
    scale_post = np.linalg.inv(scale_inv)
    scale_post = (scale_post + scale_post.T) / 2.0

    precision = sample_wishart(scale_post, dof_post, rng)
    precision = (precision + precision.T) / 2.0
    mu_post = (cfg.prior_scale * mu0 + n * x_bar) / beta_post
    chol = _robust_cholesky(beta_post * precision)
    mean = sample_mvn_from_precision(mu_post, chol, rng)
    return mean, precision


def _robust_cholesky(a: np.ndarray) -> np.ndarray:
    eps = 1e-8
    for _ in range(6):
        try:
            return cholesky(a)
        except ValueError:
            logger.warning("posterior precision not SPD, regularizing diagonal by %.0e", eps)
            a = a + eps * np.eye(a.shape[0])
            eps *= 10.0
    raise ValueError("posterior precision stayed non-SPD after regularization")


def _sample_factors(own: np.ndarray, other: np.ndarray, offsets: np.ndarray,
                    neighbor_idx: np.ndarray, values: np.ndarray,
                    mean: np.ndarray, precision: np.ndarray,
                    obs_precision: float, rng: np.random.Generator) -> None:
    """One Gibbs pass over rows of ``own`` (users given movies or vice versa)."""
    prior_term = precision @ mean
    for i in range(own.shape[0]):
        lo, hi = offsets[i], offsets[i + 1]
        if lo == hi:
            continue
        neigh = other[neighbor_idx[lo:hi]]
        post_precision = precision + obs_precision * neigh.T @ neigh
        rhs = obs_precision * neigh.T @ values[lo:hi] + prior_term
        chol = _robust_cholesky(post_precision)
        post_mean = solve_triangular(
            chol.T, solve_triangular(chol, rhs, lower=True), lower=False)
        own[i] = sample_mvn_from_precision(post_mean, chol, rng)


def _grouped(rows: np.ndarray, key_col: int, val_col: int, n_keys: int):
    """Sort rows by a key column; return (offsets, companion indices, ratings)."""
    order = np.argsort(rows[:, key_col], kind="stable")
    sorted_rows = rows[order]
    offsets = np.searchsorted(sorted_rows[:, key_col], np.arange(n_keys + 1))
    return offsets, sorted_rows[:, val_col], sorted_rows[:, 2].astype(np.float64)


def _rebalance(user_f: np.ndarray, movie_f: np.ndarray) -> None:
    """Split the overall scale evenly between the two factor matrices.

    Every u.v product is invariant under (U*c, V/c); without pinning that
    direction the chain's radial random walk makes averaged factors a poor
    point estimate on very small data. At scale c stays ~1.
    """
    u_norm = float(np.linalg.norm(user_f))
    m_norm = float(np.linalg.norm(movie_f))
    if u_norm <= 0.0 or m_norm <= 0.0:
        return
    c = np.sqrt(m_norm / u_norm)
    user_f *= c
    movie_f /= c


def train_bpmf(dataset: RatingsDataset, config: BpmfConfig,
               train_users=None) -> FactorSet:
    """Run the Gibbs sampler on the training users' ratings (all movies).

    Users outside ``train_users`` and movies with zero training ratings are
    excluded from sampling and come back as prior-mean (zero) rows.
    """
    rng = np.random.default_rng(config.seed)
    d = config.latent_dim

    if train_users is None:
        rows = dataset.ratings
    else:
        keep = np.isin(dataset.ratings[:, 0], np.fromiter(train_users, dtype=np.int64))
        rows = dataset.ratings[keep]
    if len(rows) == 0:
        raise ValueError("no training ratings to factorize")

    active_users, user_pos = np.unique(rows[:, 0], return_inverse=True)
    active_movies, movie_pos = np.unique(rows[:, 1], return_inverse=True)
    compact = np.column_stack([user_pos, movie_pos, rows[:, 2]])
    n_users, n_movies = len(active_users), len(active_movies)

    u_offsets, u_neighbors, u_values = _grouped(compact, 0, 1, n_users)
    m_offsets, m_neighbors, m_values = _grouped(compact, 1, 0, n_movies)

    user_f = rng.normal(0.0, config.init_noise, size=(n_users, d))
    movie_f = rng.normal(0.0, config.init_noise, size=(n_movies, d))
    user_sum = np.zeros_like(user_f)
    movie_sum = np.zeros_like(movie_f)
    kept = 0

    for sweep in range(config.gibbs_iterations):
        user_mean, user_prec = _sample_hyperparams(user_f, config, rng)
        movie_mean, movie_prec = _sample_hyperparams(movie_f, config, rng)
        _sample_factors(user_f, movie_f, u_offsets, u_neighbors, u_values,
                        user_mean, user_prec, config.obs_precision, rng)
        _sample_factors(movie_f, user_f, m_offsets, m_neighbors, m_values,
                        movie_mean, movie_prec, config.obs_precision, rng)
        _rebalance(user_f, movie_f)
        if sweep >= config.burn_in:
            user_sum += user_f
            movie_sum += movie_f
            kept += 1
        if (sweep + 1) % 25 == 0:
            logger.info("gibbs sweep %d/%d", sweep + 1, config.gibbs_iterations)

    user_avg = user_sum / kept
    movie_avg = movie_sum / kept

    full_users = np.zeros((dataset.user_count, d))
    full_users[active_users] = user_avg
    full_movies = np.zeros((dataset.movie_count, d))
    full_movies[active_movies] = movie_avg

    scale = float(np.abs(user_avg).max())
    if scale <= 0.0:
        scale = 1.0
    return FactorSet(user_factors=full_users, movie_factors=full_movies,
                     user_scale=scale, dataset_digest=dataset.digest())


def predict_rating(factors: FactorSet, user_vector: np.ndarray, movie_index: int) -> float:
    if not 0 <= movie_index < factors.movie_factors.shape[0]:
        raise KeyError(f"unknown movie index {movie_index}")
    raw = float(user_vector @ factors.movie_factors[movie_index])
    return float(np.clip(raw, 1.0, 5.0))


def predict_ratings(factors: FactorSet, user_vector: np.ndarray,
                    movie_indices: np.ndarray) -> np.ndarray:
    raw = factors.movie_factors[np.asarray(movie_indices, dtype=np.int64)] @ user_vector
    return np.clip(raw, 1.0, 5.0)


def scaled_user_target(factors: FactorSet, user_index: int) -> np.ndarray:
    """User factor divided by user_scale; inverse is multiplication by it."""
    if not 0 <= user_index < factors.user_factors.shape[0]:
        raise KeyError(f"unknown user index {user_index}")
    return factors.user_factors[user_index] / factors.user_scale


def save_factors(factors: FactorSet, path: str | Path, config: BpmfConfig | None = None) -> Path:
    path = Path(path)
    storage.save_arrays(
        path,
        version=np.asarray(FACTORS_FILE_VERSION),
        user_factors=factors.user_factors,
        movie_factors=factors.movie_factors,
        user_scale=np.asarray(factors.user_scale),
        dataset_digest=np.asarray(factors.dataset_digest),
        config=storage.encode_json(asdict(config) if config else {}),
    )
    return path


def load_factors(path: str | Path) -> FactorSet:
    data = storage.load_arrays(path)
    storage.check_version(path, int(data["version"]), FACTORS_FILE_VERSION, "factor checkpoint")
    return FactorSet(
        user_factors=data["user_factors"],
        movie_factors=data["movie_factors"],
        user_scale=float(data["user_scale"]),
        dataset_digest=str(data["dataset_digest"]),
    )

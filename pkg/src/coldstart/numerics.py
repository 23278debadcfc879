"""Dense layers with hand-written backprop, Adam, and the Gibbs samplers.

Everything here operates on plain numpy arrays. All randomness is drawn
from a ``numpy.random.Generator`` passed in by the caller; nothing touches
the global numpy RNG state.
"""

from __future__ import annotations

import logging
from typing import Literal, Sequence

import numpy as np
from scipy.linalg import solve_triangular

logger = logging.getLogger(__name__)

Activation = Literal["relu", "tanh", "linear"]


def relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def _activate(z: np.ndarray, activation: Activation) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "tanh":
        return np.tanh(z)
    if activation == "linear":
        return z
    raise ValueError(f"unknown activation {activation!r}")


def _activation_grad(z: np.ndarray, out: np.ndarray, activation: Activation) -> np.ndarray:
    if activation == "relu":
        return (z > 0.0).astype(z.dtype)
    if activation == "tanh":
        return 1.0 - out * out
    return np.ones_like(z)


class DenseLayer:
    """Fully connected layer: out = act(W @ dropout(x) + b).

    Dropout is inverted (kept units scaled by 1/keep_prob) and applied to
    the layer input, only when ``training`` is true.
    """

    def __init__(self, in_dim: int, out_dim: int, activation: Activation = "linear",
                 dropout: float = 0.0, *, rng: np.random.Generator | None = None,
                 weights: np.ndarray | None = None, bias: np.ndarray | None = None):
        if not 0.0 <= dropout < 1.0:
            raise ValueError(f"dropout must be in [0,1), got {dropout}")
        if weights is None:
            if rng is None:
                raise ValueError("need an rng (or explicit weights) to initialize")
            # He init for relu, Xavier otherwise
            scale = np.sqrt(2.0 / in_dim) if activation == "relu" else np.sqrt(1.0 / in_dim)
            weights = rng.standard_normal((out_dim, in_dim)) * scale
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (out_dim, in_dim):
            raise ValueError(f"weights shape {weights.shape} != ({out_dim}, {in_dim})")
        self.weights = weights
        if bias is None:
            # small positive bias keeps relu units alive at all-zero inputs
            fill = 0.01 if activation == "relu" else 0.0
            bias = np.full(out_dim, fill)
        self.bias = np.asarray(bias, dtype=np.float64)
        self.activation: Activation = activation
        self.dropout = dropout
        self.in_dim = in_dim
        self.out_dim = out_dim

    @property
    def params(self) -> list[np.ndarray]:
        return [self.weights, self.bias]

    def forward(self, x: np.ndarray, training: bool = False,
                rng: np.random.Generator | None = None) -> np.ndarray:
        out, _ = self.forward_cache(x, training=training, rng=rng)
        return out

    def forward_cache(self, x: np.ndarray, training: bool = False,
                      rng: np.random.Generator | None = None):
        """Forward pass returning (output, cache) for a later backward call."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        x2 = x[None, :] if single else x
        if x2.shape[1] != self.in_dim:
            raise ValueError(f"input dim {x2.shape[1]} != layer in_dim {self.in_dim}")

        drop_scale = None
        x_used = x2
        if training and self.dropout > 0.0:
            if rng is None:
                raise ValueError("training-mode dropout needs an rng")
            keep = 1.0 - self.dropout
            drop_scale = (rng.random(x2.shape) >= self.dropout) / keep
            x_used = x2 * drop_scale

        z = x_used @ self.weights.T + self.bias
        out = _activate(z, self.activation)
        cache = (x_used, drop_scale, z, out, single)
        return (out[0] if single else out), cache

    def backward(self, cache, grad_out: np.ndarray):
        """Gradients of a scalar loss w.r.t. input, weights and bias.

        ``grad_out`` is d(loss)/d(output) with the same shape the forward
        call produced. Batched inputs sum parameter gradients over the batch.
        """
        x_used, drop_scale, z, out, single = cache
        g = np.asarray(grad_out, dtype=np.float64)
        g2 = g[None, :] if single else g
        if g2.shape != z.shape:
            raise ValueError(f"gradient shape {g2.shape} != forward output shape {z.shape}")

        dz = g2 * _activation_grad(z, out, self.activation)
        grad_w = dz.T @ x_used
        grad_b = dz.sum(axis=0)
        grad_x = dz @ self.weights
        if drop_scale is not None:
            grad_x = grad_x * drop_scale
        return (grad_x[0] if single else grad_x), grad_w, grad_b


def dense_forward(layer: DenseLayer, x: np.ndarray, dropout_rate: float | None = None,
                  training: bool = False, rng: np.random.Generator | None = None):
    """Functional wrapper around DenseLayer.forward_cache.

    ``dropout_rate`` overrides the layer's configured rate when given.
    """
    if dropout_rate is not None and dropout_rate != layer.dropout:
        saved = layer.dropout
        layer.dropout = dropout_rate
        try:
            return layer.forward_cache(x, training=training, rng=rng)
        finally:
            layer.dropout = saved
    return layer.forward_cache(x, training=training, rng=rng)


def dense_backward(layer: DenseLayer, cache, grad_out: np.ndarray):
    return layer.backward(cache, grad_out)


class Adam:
    """Adam with bias correction over a fixed list of parameter arrays."""

    def __init__(self, params: Sequence[np.ndarray], learning_rate: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.first_moment = [np.zeros_like(p) for p in params]
        self.second_moment = [np.zeros_like(p) for p in params]

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> bool:
        """One in-place update. Returns False (and changes nothing) on a
        non-finite gradient."""
        if len(params) != len(self.first_moment) or len(grads) != len(params):
            raise ValueError("parameter/gradient count mismatch")
        for p, g in zip(params, grads):
            if p.shape != g.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if any(not np.all(np.isfinite(g)) for g in grads):
            logger.warning("non-finite gradient, skipping Adam step %d", self.step_count + 1)
            return False

        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        for p, g, m, v in zip(params, grads, self.first_moment, self.second_moment):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / (1.0 - b1 ** t)
            v_hat = v / (1.0 - b2 ** t)
            p -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)
        return True


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: Adam) -> bool:
    return state.step(params, grads)


def cholesky(a: np.ndarray) -> np.ndarray:
    """Lower-triangular L with L @ L.T == a. Raises ValueError off SPD inputs."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.allclose(a, a.T, rtol=1e-8, atol=1e-10):
        raise ValueError("matrix is not symmetric")
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise ValueError("matrix is not positive definite") from exc


def sample_mvn(mean: np.ndarray, covariance: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    mean = np.asarray(mean, dtype=np.float64)
    chol = cholesky(covariance)
    return mean + chol @ rng.standard_normal(mean.shape[0])


def sample_mvn_from_precision(mean: np.ndarray, precision_chol: np.ndarray,
                              rng: np.random.Generator) -> np.ndarray:
    """Draw N(mean, P^-1) given the lower Cholesky factor of the precision P."""
    z = rng.standard_normal(mean.shape[0])
    return mean + solve_triangular(precision_chol.T, z, lower=False)


def sample_wishart(scale: np.ndarray, dof: float, rng: np.random.Generator) -> np.ndarray:
    """Wishart draw via the Bartlett decomposition; E[W] = dof * scale."""
    scale = np.asarray(scale, dtype=np.float64)
    d = scale.shape[0]
    if dof <= d - 1:
        raise ValueError(f"dof must exceed dim-1 ({d - 1}), got {dof}")
    chol = cholesky(scale)
    bartlett = np.zeros((d, d))
    for i in range(d):
        bartlett[i, i] = np.sqrt(rng.chisquare(dof - i))
    tril = np.tril_indices(d, k=-1)
    bartlett[tril] = rng.standard_normal(len(tril[0]))
    factor = chol @ bartlett
    return factor @ factor.T

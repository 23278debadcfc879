"""The question-selection Q-network.

Topology is fixed at 2k-dim state -> 64 -> 32 -> k q-values (relu output,
so q >= 0), with 0.5 dropout on the two hidden layers during training.
Hidden activations are relu for the embedding-head variant and tanh for the
rating-head variant. Learning targets are Monte-Carlo returns built from the
terminal inverse-RMSE reward, with already-asked actions pinned to 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .numerics import Adam, DenseLayer


@dataclass
class EpsilonSchedule:
    """Linear decay per epoch down to a floor."""

    start: float = 1.0
    decrement: float = 0.05
    floor: float = 0.2

    def value(self, epoch: int) -> float:
        return max(self.floor, self.start - self.decrement * epoch)


class DqnParams:
    """Three dense layers plus their Adam state."""

    def __init__(self, layer1: DenseLayer, layer2: DenseLayer, output: DenseLayer,
                 learning_rate: float = 5e-4):
        self.layer1 = layer1
        self.layer2 = layer2
        self.output = output
        self.adam = Adam(self.params, learning_rate=learning_rate)

    @classmethod
    def create(cls, rng: np.random.Generator, n_actions: int = 100,
               hidden_activation: str = "relu", learning_rate: float = 5e-4,
               dropout: float = 0.5) -> "DqnParams":
        if hidden_activation not in ("relu", "tanh"):
            raise ValueError("hidden activation must be relu or tanh")
        # dropout regularizes the two hidden activations, never the state
        # input itself, so it rides on the consuming layer's input side
        layer1 = DenseLayer(2 * n_actions, 64, hidden_activation, 0.0, rng=rng)
        layer2 = DenseLayer(64, 32, hidden_activation, dropout, rng=rng)
        output = DenseLayer(32, n_actions, "relu", dropout, rng=rng)
        return cls(layer1, layer2, output, learning_rate=learning_rate)

    @property
    def n_actions(self) -> int:
        return self.output.out_dim

    @property
    def params(self) -> list[np.ndarray]:
        return self.layer1.params + self.layer2.params + self.output.params

    def forward_cache(self, state: np.ndarray, training: bool = False,
                      rng: np.random.Generator | None = None):
        h1, c1 = self.layer1.forward_cache(state, training=training, rng=rng)
        h2, c2 = self.layer2.forward_cache(h1, training=training, rng=rng)
        q, c3 = self.output.forward_cache(h2, training=training, rng=rng)
        return q, (c1, c2, c3)

    def backward(self, caches, grad_q: np.ndarray) -> list[np.ndarray]:
        c1, c2, c3 = caches
        g2, gw3, gb3 = self.output.backward(c3, grad_q)
        g1, gw2, gb2 = self.layer2.backward(c2, g2)
        _, gw1, gb1 = self.layer1.backward(c1, g1)
        return [gw1, gb1, gw2, gb2, gw3, gb3]


def q_forward(params: DqnParams, state: np.ndarray, training: bool = False,
              rng: np.random.Generator | None = None) -> np.ndarray:
    q, _ = params.forward_cache(state, training=training, rng=rng)
    return q


def select_action(q: np.ndarray, asked: np.ndarray, epsilon: float,
                  rng: np.random.Generator) -> int:
    """Masked epsilon-greedy pick; greedy ties go to the lowest slot."""
    asked = np.asarray(asked, dtype=bool)
    open_slots = np.flatnonzero(~asked)
    if len(open_slots) == 0:
        raise ValueError("every action slot is masked")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.choice(open_slots))
    masked_q = np.where(asked, -np.inf, q)
    return int(np.argmax(masked_q))


def build_targets(action_slots: Sequence[int], rmse: float, gamma: float,
                  current_qs: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Per-step 100-vector regression targets for one interview.

    Step t (1-based, length k) gets gamma^(k-t)/rmse at its taken action and
    exactly 0 at every action asked earlier in the interview; all remaining
    entries copy the current prediction so they contribute no gradient.
    """
    if rmse <= 0.0:
        raise ValueError(f"rmse must be positive, got {rmse}")
    if len(action_slots) != len(current_qs):
        raise ValueError("need one current q-vector per step")
    k = len(action_slots)
    targets = []
    for t, (slot, q) in enumerate(zip(action_slots, current_qs), start=1):
        target = np.array(q, dtype=np.float64, copy=True)
        for earlier in action_slots[: t - 1]:
            target[earlier] = 0.0
        target[slot] = gamma ** (k - t) / rmse
        targets.append(target)
    return targets


def dqn_update(params: DqnParams, states: np.ndarray, targets: np.ndarray,
               rng: np.random.Generator | None = None, training: bool = True,
               loss_mode: str = "mse") -> float:
    """One Adam step on a batch of (state, target-vector) pairs.

    ``mse`` regresses the q-vector onto the target (the default);
    ``softmax_ce`` is the cross-entropy variant, treating the normalized
    target vector as a distribution over actions.
    """
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if len(states) == 0:
        raise ValueError("empty update batch")
    if states.shape[0] != targets.shape[0]:
        raise ValueError("state/target count mismatch")

    q, caches = params.forward_cache(states, training=training, rng=rng)
    batch, width = q.shape

    if loss_mode == "mse":
        # Entries where the target just echoes the current (inference-mode)
        # prediction are frozen: they contribute neither loss nor gradient.
        # Without the mask, dropout noise on those ~97 entries per row would
        # drown the handful that carry learning signal.
        reference = params.forward_cache(states, training=False)[0] if training else q
        live = targets != reference
        diff = (q - targets) * live
        loss = float(np.sum(diff * diff) / (batch * width))
        grad_q = 2.0 * diff / (batch * width)
    elif loss_mode == "softmax_ce":
        shifted = q - q.max(axis=1, keepdims=True)
        expq = np.exp(shifted)
        probs = expq / expq.sum(axis=1, keepdims=True)
        pos = np.maximum(targets, 0.0)
        sums = pos.sum(axis=1, keepdims=True)
        ref = np.where(sums > 0.0, pos / np.maximum(sums, 1e-12),
                       np.full_like(pos, 1.0 / width))
        loss = float(np.mean(-(ref * np.log(probs + 1e-12)).sum(axis=1)))
        grad_q = (probs - ref) / batch
    else:
        raise ValueError(f"unknown loss mode {loss_mode!r}")

    if not np.isfinite(loss):
        raise ValueError("non-finite loss in q-network update")
    grads = params.backward(caches, grad_q)
    params.adam.step(params.params, grads)
    return loss

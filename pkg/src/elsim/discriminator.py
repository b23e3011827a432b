"""Per-node letter classifiers and the moving-average split readiness tracker."""
from __future__ import annotations

import numpy as np

from .errors import ElsimError
from .nn import Mlp, TrainBatch, forward, softmax, log_softmax, train_classifier_step


class Discriminator:
    """Classifies a visited state into one of the ``vocab_size`` letters that
    follow the owner prefix."""

    def __init__(self, owner: tuple, obs_dim: int, vocab_size: int, hidden=(64, 64),
                 rng: np.random.Generator | None = None, optimizer: str = "adam",
                 net: Mlp | None = None):
        self.owner = tuple(owner)
        self.vocab_size = vocab_size
        self.net = net if net is not None else Mlp(
            (obs_dim, *hidden, vocab_size), rng=rng, optimizer=optimizer)

    def infer(self, s_next) -> np.ndarray:
        return infer(self, s_next)

    def log_probs(self, s_next) -> np.ndarray:
        return log_softmax(forward(self.net, s_next))


def infer(d: Discriminator, s_next) -> np.ndarray:
    return softmax(forward(d.net, s_next))


def train_discriminator_step(d: Discriminator, states, letters, lr: float) -> float:
    return train_classifier_step(d.net, TrainBatch(states, letters), lr)


class PFinishTracker:
    """Exponential moving average of the discriminator's confidence on the
    final state of each child skill."""

    def __init__(self, vocab_size: int, beta: float = 0.02, init: float | None = None):
        if not 0.0 <= beta <= 1.0:
            raise ElsimError(f"beta must lie in [0, 1], got {beta}")
        self.beta = beta
        start = 1.0 / vocab_size if init is None else init
        self.estimates = np.full(vocab_size, start, dtype=np.float64)

    def update(self, letter: int, q_final: float) -> float:
        return update_p_finish(self, letter, q_final)

    def ready(self, delta: float) -> bool:
        return ready_to_split(self, delta)


def update_p_finish(t: PFinishTracker, letter: int, q_final: float) -> float:
    if not 0 <= letter < len(t.estimates):
        raise ElsimError(f"letter {letter} outside vocabulary of size {len(t.estimates)}")
    if not 0.0 <= q_final <= 1.0:
        raise ElsimError(f"q_final must be a probability, got {q_final}")
    t.estimates[letter] = (1.0 - t.beta) * t.estimates[letter] + t.beta * q_final
    return float(t.estimates[letter])


def ready_to_split(t: PFinishTracker, delta: float) -> bool:
    return bool(np.all(t.estimates >= delta))

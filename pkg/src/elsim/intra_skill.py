"""Leaf-level machinery: replay buffers, intrinsic rewards and soft DQN policies."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ElsimError
from .nn import Mlp, TrainBatch, forward, logsumexp, polyak_update, softmax, train_regression_step


class Transition(NamedTuple):
    state: np.ndarray
    action: int
    next_state: np.ndarray
    done: bool


class TransitionBatch(NamedTuple):
    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray

    def __len__(self):
        return len(self.actions)

    @classmethod
    def concat(cls, parts):
        return cls(*(np.concatenate(cols) for cols in zip(*parts)))


class ReplayBuffer:
    """Fixed-capacity FIFO of transitions backed by preallocated arrays.

    Extrinsic rewards are deliberately not stored: intra-skill rewards are
    recomputed from the live discriminators each time a batch is drawn.
    """

    def __init__(self, capacity: int, obs_dim: int = 2):
        if capacity <= 0:
            raise ElsimError("buffer capacity must be positive")
        self.capacity = capacity
        self.obs_dim = obs_dim
        self.states = np.zeros((capacity, obs_dim))
        self.next_states = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.dones = np.zeros(capacity, dtype=bool)
        self.size = 0
        self.total_pushed = 0
        self._next = 0

    def __len__(self):
        return self.size

    def push(self, t: Transition) -> None:
        i = self._next
        self.states[i] = t.state
        self.actions[i] = t.action
        self.next_states[i] = t.next_state
        self.dones[i] = t.done
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.total_pushed += 1

    def sample(self, k: int, rng: np.random.Generator) -> TransitionBatch:
        """Draw ``k`` transitions uniformly with replacement."""
        if self.size == 0:
            raise ElsimError("cannot sample from an empty replay buffer")
        idx = rng.integers(0, self.size, size=k)
        return TransitionBatch(self.states[idx], self.actions[idx],
                               self.next_states[idx], self.dones[idx])

    def _order(self) -> np.ndarray:
        start = self._next if self.size == self.capacity else 0
        return (start + np.arange(self.size)) % self.capacity

    def contents(self) -> list[Transition]:
        """Stored transitions, oldest first."""
        return [Transition(self.states[i].copy(), int(self.actions[i]),
                           self.next_states[i].copy(), bool(self.dones[i]))
                for i in self._order()]

    def copy(self) -> "ReplayBuffer":
        new = ReplayBuffer(self.capacity, self.obs_dim)
        for name in ("states", "next_states", "actions", "dones"):
            getattr(new, name)[...] = getattr(self, name)
        new.size, new.total_pushed, new._next = self.size, self.total_pushed, self._next
        return new


def push(b: ReplayBuffer, t: Transition) -> None:
    b.push(t)


def sample(b: ReplayBuffer, k: int, rng: np.random.Generator) -> TransitionBatch:
    return b.sample(k, rng)


class QNetwork:
    """Online/target pair of action-value networks for one skill."""

    def __init__(self, obs_dim: int, action_count: int, hidden=(64, 64),
                 rng: np.random.Generator | None = None, optimizer: str = "adam",
                 online: Mlp | None = None, target: Mlp | None = None):
        self.action_count = action_count
        self.online = online if online is not None else Mlp(
            (obs_dim, *hidden, action_count), rng=rng, optimizer=optimizer)
        self.target = target if target is not None else self.online.clone()
        if self.online.layer_sizes != self.target.layer_sizes:
            raise ElsimError("online and target networks must share layer sizes")

    def q_values(self, s) -> np.ndarray:
        return forward(self.online, s)


def boltzmann_probs(q_values: np.ndarray, temp_coeff: float) -> np.ndarray:
    if temp_coeff <= 0:
        raise ElsimError("Boltzmann coefficient must be positive")
    return softmax(temp_coeff * np.asarray(q_values, dtype=np.float64))


def sample_categorical(probs: np.ndarray, rng: np.random.Generator) -> int:
    cum = np.cumsum(probs)
    return min(int(np.searchsorted(cum, rng.random() * cum[-1], side="right")), len(probs) - 1)


def boltzmann_act(q: QNetwork, s, temp_coeff: float, rng: np.random.Generator) -> int:
    return sample_categorical(boltzmann_probs(q.q_values(s), temp_coeff), rng)


@dataclass
class IntrinsicRewardSpec:
    alpha: float = 1.0
    log_floor: float = math.log(1e-4)

    def __post_init__(self):
        if not self.log_floor < 0:
            raise ElsimError("log_floor must be negative")


def chain_log_probs(tree, g: tuple, s_next, log_floor: float) -> np.ndarray:
    """Clamped ``log q(l^i | s', l^{:i})`` for every letter of ``g``.

    Returns an array with one leading axis per letter; trailing axes follow
    ``s_next`` (a single observation or a batch).
    """
    g = tuple(g)
    nodes = tree.path_nodes(g)
    out = []
    for node, letter in zip(nodes[:-1], g):
        lp = node.discriminator.log_probs(s_next)[..., letter]
        out.append(np.maximum(lp, log_floor))
    return np.array(out)


def intrinsic_reward(tree, g: tuple, s_next, spec: IntrinsicRewardSpec):
    """Reward of leaf skill ``g`` for reaching ``s_next``.

    The newest letter's log-probability plus ``alpha`` times the log-probabilities
    of all earlier letters, each clamped below at ``spec.log_floor``.
    """
    g = tuple(g)
    if not g or not tree.node(g).is_leaf:
        raise ElsimError(f"intrinsic reward is defined for non-root leaves, got {g}")
    logs = chain_log_probs(tree, g, s_next, spec.log_floor)
    r = logs[-1] + spec.alpha * logs[:-1].sum(axis=0)
    return float(r) if np.ndim(r) == 0 else r


def td_targets(q: QNetwork, batch: TransitionBatch, rewards, gamma: float,
               temp_coeff: float) -> np.ndarray:
    """``r + gamma * (1 - done) * softmax-value of the target net at s'``."""
    q_next = forward(q.target, batch.next_states)
    soft_value = logsumexp(temp_coeff * q_next, axis=-1) / temp_coeff
    return np.asarray(rewards, dtype=np.float64) + gamma * (1.0 - batch.dones) * soft_value


def dqn_update(q: QNetwork, batch: TransitionBatch, rewards, gamma: float, lr: float,
               tau: float, temp_coeff: float) -> float:
    if len(rewards) != len(batch):
        raise ElsimError("one reward per transition is required")
    y = td_targets(q, batch, rewards, gamma, temp_coeff)
    loss = train_regression_step(q.online, TrainBatch(batch.states, y, batch.actions), lr)
    polyak_update(q.target, q.online, tau)
    return loss

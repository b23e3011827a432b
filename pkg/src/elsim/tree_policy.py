"""Task-level policy that walks the skill tree letter by letter.

Edges are ``(node_id, letter)`` pairs. Leaf edges are learned by a convex
update towards the scaled episode return, and every ancestor edge holds the
max over its child node's outgoing edges.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import ElsimError
from .intra_skill import sample_categorical
from .nn import softmax
from .tree import NodePhase, SkillNode, SkillTree


class TreeQTable:
    def __init__(self):
        self.q: dict[tuple, float] = {}
        self.counts: dict[tuple, int] = {}

    @classmethod
    def for_tree(cls, tree: SkillTree) -> "TreeQTable":
        qt = cls()
        qt.sync(tree)
        return qt

    def sync(self, tree: SkillTree, value: float = 0.0) -> None:
        """Create missing entries for every instantiated edge."""
        for node in tree.nodes():
            for v in range(len(node.children)):
                self.q.setdefault((node.id, v), value)
                self.counts.setdefault((node.id, v), 0)

    def values(self, g: tuple, vocab_size: int) -> np.ndarray:
        return np.array([self.q[(g, v)] for v in range(vocab_size)])

    def reset(self) -> None:
        for k in self.q:
            self.q[k] = 0.0
            self.counts[k] = 0


def mbie_eb(q, n, beta_explore: float):
    """Count-based optimism: ``q + beta / sqrt(max(1, n))``."""
    return q + beta_explore / np.sqrt(np.maximum(1, n))


def letter_probs(tree: SkillTree, qt: TreeQTable, node: SkillNode, temp: float,
                 explore_bonus: float | None = None) -> np.ndarray:
    k = tree.vocab_size
    if node.children_are_leaves or node.phase is NodePhase.LEARNING:
        return np.full(k, 1.0 / k)
    q = qt.values(node.id, k)
    if explore_bonus:
        counts = np.array([qt.counts[(node.id, v)] for v in range(k)])
        q = mbie_eb(q, counts, explore_bonus)
    return softmax(temp * q)


def select_skill(tree: SkillTree, qt: TreeQTable, temp: float, explore_bonus: float | None,
                 rng: np.random.Generator, count: bool = True) -> tuple:
    """Walk from the root to a leaf and return its id.

    Learning-phase nodes and the final letter choose uniformly; exploitation
    nodes sample a Boltzmann distribution over (optionally bonus-augmented)
    edge values. Visit counts are incremented along the path when ``count``.
    """
    node = tree.root
    while not node.is_leaf:
        v = sample_categorical(letter_probs(tree, qt, node, temp, explore_bonus), rng)
        if count:
            qt.counts[(node.id, v)] += 1
        node = node.children[v]
    return node.id


def greedy_leaf(tree: SkillTree, qt: TreeQTable) -> tuple:
    """Argmax walk over edge values; ties go to the lowest letter."""
    node = tree.root
    while not node.is_leaf:
        node = node.children[int(np.argmax(qt.values(node.id, tree.vocab_size)))]
    return node.id


def discounted_return(rewards, gamma_tree: float) -> float:
    total, disc = 0.0, 1.0
    for r in rewards:
        total += disc * r
        disc *= gamma_tree
    return total


def scale_return(discounted: float, ep_len: int) -> float:
    if ep_len <= 0:
        raise ElsimError("episode length must be positive")
    return discounted / ep_len


def update_after_episode(qt: TreeQTable, leaf: tuple, r_tree: float, lr_tree: float) -> None:
    leaf = tuple(leaf)
    if not leaf:
        raise ElsimError("the root is not reachable as a selected skill")
    edge = (leaf[:-1], leaf[-1])
    if edge not in qt.q:
        raise ElsimError(f"unknown leaf {leaf}")
    qt.q[edge] = (1.0 - lr_tree) * qt.q[edge] + lr_tree * r_tree
    node = leaf[:-1]
    while node:
        best = -math.inf
        v = 0
        while (node, v) in qt.q:
            best = max(best, qt.q[(node, v)])
            v += 1
        qt.q[(node[:-1], node[-1])] = best
        node = node[:-1]


def init_children_q(qt: TreeQTable, parent_edge_value: float, child_edges) -> None:
    for edge in child_edges:
        qt.q[edge] = parent_edge_value
        qt.counts.setdefault(edge, 0)

"""The growing tree of skills.

A skill is identified by its letter sequence (a tuple of ints in
``[0, vocab_size)``); the empty tuple is the root. Internal nodes own a
discriminator over their children's letters, leaves own a replay buffer and
an intra-skill Q-network.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .discriminator import Discriminator, PFinishTracker
from .errors import ElsimError
from .intra_skill import QNetwork, ReplayBuffer

SkillId = tuple


class NodePhase(enum.Enum):
    LEARNING = "learning"
    EXPLOITATION = "exploitation"


def skill_str(g: SkillId) -> str:
    return "-".join(str(v) for v in g) if g else "root"


def parse_skill(text: str) -> SkillId:
    return () if text in ("", "root") else tuple(int(v) for v in text.split("-"))


@dataclass(eq=False)
class SkillNode:
    id: SkillId
    phase: NodePhase = NodePhase.LEARNING
    children: list["SkillNode"] = field(default_factory=list)
    discriminator: Discriminator | None = None
    buffer: ReplayBuffer | None = None
    policy: QNetwork | None = None
    p_finish: PFinishTracker | None = None

    @property
    def is_leaf(self) -> bool:
        return not self.children

    @property
    def depth(self) -> int:
        return len(self.id)

    @property
    def children_are_leaves(self) -> bool:
        return bool(self.children) and self.children[0].is_leaf


class SkillTree:
    def __init__(self, vocab_size: int = 4, obs_dim: int = 2, action_count: int = 4,
                 max_depth: int = 10, hidden=(64, 64), buffer_size: int = 10_000,
                 beta_ema: float = 0.02, optimizer: str = "adam",
                 rng: np.random.Generator | None = None, init_leaves: bool = True):
        if vocab_size < 2 or max_depth < 1:
            raise ElsimError("need vocab_size >= 2 and max_depth >= 1")
        self.vocab_size = vocab_size
        self.obs_dim = obs_dim
        self.action_count = action_count
        self.max_depth = max_depth
        self.hidden = tuple(hidden)
        self.buffer_size = buffer_size
        self.beta_ema = beta_ema
        self.optimizer = optimizer
        self.rng = rng if rng is not None else np.random.default_rng()
        self.root = SkillNode(())
        self._nodes: dict[SkillId, SkillNode] = {(): self.root}
        if init_leaves:
            self._make_internal(self.root)
            for v in range(vocab_size):
                child = SkillNode((v,), buffer=ReplayBuffer(buffer_size, obs_dim),
                                  policy=self.new_policy())
                self._add(self.root, child)
        else:
            # singleton tree: the root is itself a leaf skill
            self.root.buffer = ReplayBuffer(buffer_size, obs_dim)
            self.root.policy = self.new_policy()

    def new_policy(self) -> QNetwork:
        return QNetwork(self.obs_dim, self.action_count, self.hidden, rng=self.rng,
                        optimizer=self.optimizer)

    def new_discriminator(self, owner: SkillId) -> Discriminator:
        return Discriminator(owner, self.obs_dim, self.vocab_size, self.hidden, rng=self.rng,
                             optimizer=self.optimizer)

    def _make_internal(self, node: SkillNode) -> None:
        node.discriminator = self.new_discriminator(node.id)
        node.p_finish = PFinishTracker(self.vocab_size, self.beta_ema)
        node.phase = NodePhase.LEARNING

    def _add(self, parent: SkillNode, child: SkillNode) -> None:
        parent.children.append(child)
        self._nodes[child.id] = child

    def __contains__(self, g) -> bool:
        return tuple(g) in self._nodes

    def __len__(self) -> int:
        return len(self._nodes)

    def node(self, g) -> SkillNode:
        try:
            return self._nodes[tuple(g)]
        except KeyError:
            raise ElsimError(f"unknown skill id {tuple(g)}") from None

    def nodes(self) -> list[SkillNode]:
        """All nodes, shallowest first, lexicographic within a depth."""
        return sorted(self._nodes.values(), key=lambda n: (n.depth, n.id))

    def path_nodes(self, g) -> list[SkillNode]:
        return path_nodes(self, g)

    def leaves(self) -> set:
        return leaves(self)

    def sorted_leaves(self) -> list[SkillId]:
        return sorted(leaves(self), key=lambda g: (len(g), g))

    def leaf_parents(self) -> list[SkillNode]:
        """Internal nodes whose children are leaves, i.e. nodes still learning a letter."""
        return [n for n in self.nodes() if n.children_are_leaves]


def path_nodes(tree: SkillTree, g) -> list[SkillNode]:
    g = tuple(g)
    tree.node(g)
    return [tree._nodes[g[:i]] for i in range(len(g) + 1)]


def leaves(tree: SkillTree) -> set:
    return {g for g, n in tree._nodes.items() if n.is_leaf}


def split_node(tree: SkillTree, g) -> list[SkillId]:
    """Replace leaf ``g`` by ``vocab_size`` children that copy its policy and buffer.

    ``g`` becomes an internal node with a fresh discriminator in the learning
    phase. Its own policy and buffer are retired.
    """
    node = tree.node(g)
    if not node.is_leaf:
        raise ElsimError(f"cannot split internal node {node.id}")
    if node.depth >= tree.max_depth:
        raise ElsimError(f"node {node.id} is at max depth {tree.max_depth}")
    for v in range(tree.vocab_size):
        policy = QNetwork(tree.obs_dim, tree.action_count, online=node.policy.online.clone(),
                          target=node.policy.target.clone())
        tree._add(node, SkillNode(node.id + (v,), buffer=node.buffer.copy(), policy=policy))
    tree._make_internal(node)
    node.policy = None
    node.buffer = None
    return [c.id for c in node.children]

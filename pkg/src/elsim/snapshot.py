"""JSON snapshots of a skill tree and its tree-policy table.

Network parameters are stored as base64 of ``Mlp.to_bytes`` and floats go
through ``repr``, so a save/load cycle is bit-exact. Replay buffers and
optimizer moments are not saved: a loaded tree is meant for evaluation and
transfer, and its leaves start with empty buffers.
"""
from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

from .discriminator import Discriminator, PFinishTracker
from .errors import ElsimError
from .intra_skill import QNetwork, ReplayBuffer
from .nn import Mlp
from .tree import NodePhase, SkillNode, SkillTree, parse_skill, skill_str
from .tree_policy import TreeQTable

FORMAT_VERSION = 1


def _b64(net: Mlp) -> str:
    return base64.b64encode(net.to_bytes()).decode("ascii")


def _net(text: str, optimizer: str) -> Mlp:
    return Mlp.from_bytes(base64.b64decode(text), optimizer=optimizer)


def tree_to_dict(tree: SkillTree, qt: TreeQTable | None = None) -> dict:
    nodes = []
    for node in tree.nodes():
        entry = {"id": skill_str(node.id), "phase": node.phase.value}
        if node.p_finish is not None:
            entry["p_finish"] = [float(x) for x in node.p_finish.estimates]
        if node.discriminator is not None:
            entry["discriminator"] = _b64(node.discriminator.net)
        if node.policy is not None:
            entry["policy"] = {"online": _b64(node.policy.online),
                               "target": _b64(node.policy.target)}
        if qt is not None and node.children:
            entry["q"] = [qt.q[(node.id, v)] for v in range(len(node.children))]
            entry["counts"] = [qt.counts[(node.id, v)] for v in range(len(node.children))]
        nodes.append(entry)
    return {
        "format": FORMAT_VERSION,
        "vocab_size": tree.vocab_size, "obs_dim": tree.obs_dim,
        "action_count": tree.action_count, "max_depth": tree.max_depth,
        "hidden": list(tree.hidden), "buffer_size": tree.buffer_size,
        "beta_ema": tree.beta_ema, "optimizer": tree.optimizer,
        "nodes": nodes,
    }


def tree_from_dict(doc: dict, rng: np.random.Generator | None = None):
    """Rebuild ``(tree, qt)``; ``qt`` is None when the document holds no Q-values."""
    if doc.get("format") != FORMAT_VERSION:
        raise ElsimError(f"unsupported snapshot format {doc.get('format')!r}")
    opt = doc["optimizer"]
    tree = SkillTree(doc["vocab_size"], doc["obs_dim"], doc["action_count"], doc["max_depth"],
                     tuple(doc["hidden"]), doc["buffer_size"], doc["beta_ema"], opt,
                     rng=rng, init_leaves=False)
    tree._nodes.clear()
    qt = TreeQTable()
    has_q = False
    for entry in sorted(doc["nodes"], key=lambda e: (len(parse_skill(e["id"])),
                                                     parse_skill(e["id"]))):
        g = parse_skill(entry["id"])
        node = SkillNode(g, phase=NodePhase(entry["phase"]))
        if "p_finish" in entry:
            node.p_finish = PFinishTracker(tree.vocab_size, tree.beta_ema)
            node.p_finish.estimates[...] = entry["p_finish"]
        if "discriminator" in entry:
            node.discriminator = Discriminator(g, tree.obs_dim, tree.vocab_size,
                                               net=_net(entry["discriminator"], opt))
        if "policy" in entry:
            node.policy = QNetwork(tree.obs_dim, tree.action_count,
                                   online=_net(entry["policy"]["online"], opt),
                                   target=_net(entry["policy"]["target"], opt))
            node.buffer = ReplayBuffer(tree.buffer_size, tree.obs_dim)
        if "q" in entry:
            has_q = True
            for v, (q, n) in enumerate(zip(entry["q"], entry["counts"])):
                qt.q[(g, v)] = q
                qt.counts[(g, v)] = n
        if g:
            parent = tree._nodes.get(g[:-1])
            if parent is None or len(parent.children) != g[-1]:
                raise ElsimError(f"snapshot node {entry['id']} is out of order or orphaned")
            tree._add(parent, node)
        else:
            tree.root = node
            tree._nodes[()] = node
    for node in tree.nodes():
        if node.children and len(node.children) != tree.vocab_size:
            raise ElsimError(f"node {skill_str(node.id)} has a partial set of children")
    return tree, (qt if has_q else None)


def save_snapshot(path, tree: SkillTree, qt: TreeQTable | None = None) -> None:
    Path(path).write_text(json.dumps(tree_to_dict(tree, qt), indent=1) + "\n")


def load_snapshot(path, rng: np.random.Generator | None = None):
    return tree_from_dict(json.loads(Path(path).read_text()), rng=rng)

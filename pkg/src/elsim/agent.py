"""The ELSIM training loop: episodes, learning steps, splits, evaluation, transfer."""
from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .discriminator import ready_to_split, train_discriminator_step, update_p_finish
from .envs import GridEnv, GridSpec
from .errors import ElsimError
from .intra_skill import (IntrinsicRewardSpec, TransitionBatch, Transition, boltzmann_probs,
                          chain_log_probs, dqn_update, sample_categorical)
from .tree import NodePhase, SkillNode, SkillTree, skill_str, split_node
from .tree_policy import (TreeQTable, discounted_return, init_children_q, letter_probs,
                          scale_return, select_skill, update_after_episode)

log = logging.getLogger(__name__)

METRICS_HEADER = ("step", "episode", "skill", "r_tree", "disc_loss", "dqn_loss", "n_leaves")


@dataclass
class ElsimConfig:
    # intra-skill DQN
    gamma: float = 0.98
    buffer_size: int = 10_000
    hidden: tuple = (64, 64)
    lr: float = 0.001
    episode_len: int = 100
    batch_size: int = 64
    n_envs: int = 16
    tau: float = 0.005
    alpha_dqn: float = 1.0
    # skill tree
    delta: float = 0.9
    eta: float = 0.5
    beta_ema: float = 0.02
    vocab_size: int = 4
    alpha: float = 1.0
    max_depth: int = 10
    log_floor: float = math.log(1e-4)
    min_refill: float = 1.0
    # tree-policy
    gamma_tree: float = 1.0
    alpha_tree: float = 20.0
    lr_tree: float = 0.05
    beta_explore: float = 0.5
    # run control
    total_steps: int = 2_000_000
    seed: int = 0
    optimizer: str = "adam"
    learning_steps_per_episode: int = 1
    eval_steps: int = 500

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        for name in ("lr", "tau", "lr_tree"):
            if not 0.0 < getattr(self, name) <= 1.0:
                raise ElsimError(f"{name} must lie in (0, 1]")
        for name in ("delta", "eta", "beta_ema", "gamma", "gamma_tree"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ElsimError(f"{name} must lie in [0, 1]")
        if self.min_refill < 0:
            raise ElsimError("min_refill must be non-negative")

    @classmethod
    def from_mapping(cls, values: dict) -> "ElsimConfig":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in fields:
                raise ElsimError(f"unknown config key {key!r}")
            default = getattr(cls, key, None) if key != "hidden" else (64, 64)
            kwargs[key] = _coerce(raw, default)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "ElsimConfig":
        text = Path(path).read_text()
        if text.lstrip().startswith("{"):
            return cls.from_mapping(json.loads(text))
        values = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if line:
                key, _, val = line.partition("=")
                values[key.strip()] = val.strip()
        return cls.from_mapping(values)


def _coerce(raw, default):
    if not isinstance(raw, str):
        return tuple(raw) if isinstance(default, tuple) else raw
    if isinstance(default, tuple):
        return tuple(int(v) for v in raw.replace("x", ",").split(",") if v.strip())
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(float(raw))
    if isinstance(default, float):
        return float(raw)
    return raw


class EpisodeOutcome(NamedTuple):
    skill: tuple
    discounted_return: float
    final_state: np.ndarray
    r_tree: float


@dataclass
class RunArtifacts:
    metrics: list = field(default_factory=list)
    densities: dict = field(default_factory=dict)
    snapshots: list = field(default_factory=list)

    def write_metrics(self, path) -> None:
        write_metrics(path, self.metrics)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_metrics(path, rows) -> None:
    lines = [",".join(METRICS_HEADER)]
    for row in rows:
        lines.append(",".join(_fmt(row[k]) for k in METRICS_HEADER))
    Path(path).write_text("\n".join(lines) + "\n")


def write_density(path, grid: np.ndarray) -> None:
    Path(path).write_text("\n".join(",".join(str(int(c)) for c in row) for row in grid) + "\n")


def histogram_overlap(a: np.ndarray, b: np.ndarray) -> float:
    """Histogram intersection of two visit-count grids after normalization."""
    pa = a / a.sum()
    pb = b / b.sum()
    return float(np.minimum(pa, pb).sum())


class Elsim:
    """One ELSIM agent bound to a gridworld layout."""

    def __init__(self, cfg: ElsimConfig, env_spec: GridSpec, tree: SkillTree | None = None,
                 qt: TreeQTable | None = None):
        self.cfg = cfg
        self.env_spec = dataclasses.replace(env_spec, episode_len=cfg.episode_len)
        self.rng = np.random.default_rng(cfg.seed)
        self.eval_rng = np.random.default_rng([cfg.seed, 1])
        self.envs = [GridEnv(self.env_spec) for _ in range(max(1, cfg.n_envs))]
        if tree is None:
            tree = SkillTree(cfg.vocab_size, obs_dim=2, action_count=self.envs[0].action_count,
                             max_depth=cfg.max_depth, hidden=cfg.hidden,
                             buffer_size=cfg.buffer_size, beta_ema=cfg.beta_ema,
                             optimizer=cfg.optimizer, rng=self.rng)
        self.tree = tree
        self.qt = qt if qt is not None else TreeQTable.for_tree(tree)
        self.reward_spec = IntrinsicRewardSpec(cfg.alpha, cfg.log_floor)
        self.pending: dict[tuple, dict[tuple, int]] = {}
        self.splits: list[tuple[int, tuple]] = []
        self.ready_steps: dict[tuple, int] = {}
        self.steps = 0
        self.episodes = 0
        self.artifacts = RunArtifacts()
        self._policy_cache: dict = {}

    # rollouts

    def _action_sampler(self, leaf: SkillNode):
        """Boltzmann action sampler for a leaf with a per-cell probability table.

        The table is valid until the leaf's policy next learns; the policy
        cache is cleared accordingly.
        """
        cache = self._policy_cache.get(leaf.id)
        if cache is None:
            cells = self.env_spec.free_cells()
            obs = np.array([self.env_spec.normalize(c) for c in cells])
            cum = np.cumsum(boltzmann_probs(leaf.policy.q_values(obs), self.cfg.alpha_dqn), axis=1)
            cache = {o.tobytes(): list(row) for o, row in zip(obs, cum)}
            self._policy_cache[leaf.id] = cache
        last = self.tree.action_count - 1

        def act(obs, rng):
            cum = cache[obs.tobytes()]
            u = rng.random() * cum[-1]
            for a, c in enumerate(cum):
                if u < c:
                    return a
            return last
        return act

    def run_episode(self, env: GridEnv | None = None, learn: bool = True,
                    explore_bonus: float | None = None, uniform: bool = False) -> EpisodeOutcome:
        """Select a skill, roll its policy for one episode and update the tree-policy.

        With ``learn`` the transitions go to the leaf's buffer and the final
        state feeds the p_finish trackers along the path.
        """
        cfg = self.cfg
        env = env or self.envs[0]
        if uniform:
            skill = self._uniform_leaf(self.rng)
        else:
            skill = select_skill(self.tree, self.qt, cfg.alpha_tree, explore_bonus, self.rng)
        leaf = self.tree.node(skill)
        act = self._action_sampler(leaf)
        obs = env.reset()
        rewards = []
        done = False
        while not done:
            a = act(obs, self.rng)
            nxt, r, done = env.step(a)
            if learn:
                leaf.buffer.push(Transition(obs, a, nxt, done))
            rewards.append(r)
            obs = nxt
        ret = discounted_return(rewards, cfg.gamma_tree)
        r_tree = scale_return(ret, cfg.episode_len)
        if not uniform:
            update_after_episode(self.qt, skill, r_tree, cfg.lr_tree)
        if learn:
            for node in self.tree.path_nodes(skill)[:-1]:
                letter = skill[node.depth]
                q_final = float(node.discriminator.infer(obs)[letter])
                update_p_finish(node.p_finish, letter, min(max(q_final, 0.0), 1.0))
        self.steps += len(rewards)
        self.episodes += 1
        return EpisodeOutcome(skill, ret, obs, r_tree)

    def _uniform_leaf(self, rng) -> tuple:
        node = self.tree.root
        while not node.is_leaf:
            node = node.children[int(rng.integers(len(node.children)))]
        return node.id

    # learning

    def _descend_sample(self, node: SkillNode, n: int) -> TransitionBatch:
        """``n`` transitions, each from a leaf reached by uniform descent from ``node``."""
        if node.is_leaf:
            return node.buffer.sample(n, self.rng)
        counts = np.bincount(self.rng.integers(0, len(node.children), size=n),
                             minlength=len(node.children))
        return TransitionBatch.concat(
            [self._descend_sample(c, int(k)) for c, k in zip(node.children, counts) if k])

    def _labelled_batch(self, node: SkillNode):
        counts = np.bincount(self.rng.integers(0, len(node.children), size=self.cfg.batch_size),
                             minlength=len(node.children))
        parts, labels = [], []
        for v, (child, k) in enumerate(zip(node.children, counts)):
            if k:
                parts.append(self._descend_sample(child, int(k)))
                labels.append(np.full(k, v))
        return TransitionBatch.concat(parts), np.concatenate(labels)

    def learning_step(self) -> dict:
        """One pass of discriminator and intra-skill policy training.

        Ancestors on the tree-policy path refresh their discriminator with
        probability ``eta``; the last node (whose children are leaves) always
        trains, and then every child policy learns from the same batch.
        """
        cfg = self.cfg
        node = self.tree.root
        while not node.children_are_leaves:
            if self.rng.random() < cfg.eta:
                try:
                    batch, labels = self._labelled_batch(node)
                except ElsimError as exc:
                    log.warning("skipping discriminator %s: %s", skill_str(node.id), exc)
                else:
                    train_discriminator_step(node.discriminator, batch.next_states, labels, cfg.lr)
            v = sample_categorical(letter_probs(self.tree, self.qt, node, cfg.alpha_tree), self.rng)
            node = node.children[v]
        try:
            batch, labels = self._labelled_batch(node)
        except ElsimError as exc:
            log.warning("skipping learning step at %s: %s", skill_str(node.id), exc)
            return {"node": node.id, "disc_loss": None, "dqn_loss": None}
        disc_loss = train_discriminator_step(node.discriminator, batch.next_states, labels, cfg.lr)
        s_next = batch.next_states
        prefix = 0.0
        if node.id:
            prefix = cfg.alpha * chain_log_probs(self.tree, node.id, s_next, cfg.log_floor).sum(axis=0)
        last = np.maximum(node.discriminator.log_probs(s_next), cfg.log_floor)
        dqn_losses = []
        for v, child in enumerate(node.children):
            rewards = last[:, v] + prefix
            dqn_losses.append(dqn_update(child.policy, batch, rewards, cfg.gamma, cfg.lr,
                                         cfg.tau, cfg.alpha_dqn))
            self._policy_cache.pop(child.id, None)
        return {"node": node.id, "disc_loss": disc_loss, "dqn_loss": float(np.mean(dqn_losses))}

    def maybe_split(self) -> list[tuple]:
        """Split the children of every node whose discriminator is ready, once
        their buffers have been refilled with post-readiness interactions."""
        cfg = self.cfg
        need = math.ceil(cfg.min_refill * cfg.buffer_size)
        done = []
        for node in self.tree.leaf_parents():
            if node.depth + 1 >= self.tree.max_depth:
                continue
            marks = self.pending.get(node.id)
            if marks is None:
                if node.phase is NodePhase.LEARNING and ready_to_split(node.p_finish, cfg.delta):
                    self.pending[node.id] = {c.id: c.buffer.total_pushed for c in node.children}
                    self.ready_steps[node.id] = self.steps
                continue
            if all(c.buffer.total_pushed - marks[c.id] >= need for c in node.children):
                for child in list(node.children):
                    value = self.qt.q[(node.id, child.id[-1])]
                    new_ids = split_node(self.tree, child.id)
                    init_children_q(self.qt, value, [(child.id, g[-1]) for g in new_ids])
                    self._policy_cache.pop(child.id, None)
                    done.append(child.id)
                    self.splits.append((self.steps, child.id))
                node.phase = NodePhase.EXPLOITATION
                del self.pending[node.id]
        return done

    def _record(self, outcome: EpisodeOutcome, losses: dict | None, step=None,
                episode=None) -> None:
        losses = losses or {}
        self.artifacts.metrics.append({
            "step": self.steps if step is None else step,
            "episode": self.episodes if episode is None else episode,
            "skill": skill_str(outcome.skill),
            "r_tree": outcome.r_tree, "disc_loss": losses.get("disc_loss"),
            "dqn_loss": losses.get("dqn_loss"), "n_leaves": len(self.tree.leaves()),
        })

    def train_round(self) -> list[EpisodeOutcome]:
        """Collect one episode per parallel env, then run the matching learning steps."""
        self._policy_cache.clear()
        outcomes, stamps = [], []
        for env in self.envs:
            outcomes.append(self.run_episode(env))
            stamps.append((self.steps, self.episodes))
        for out, (step, episode) in zip(outcomes, stamps):
            losses = None
            for _ in range(self.cfg.learning_steps_per_episode):
                losses = self.learning_step()
            self._record(out, losses, step, episode)
        self.maybe_split()
        return outcomes

    def train(self, total_steps: int | None = None, stop=None) -> RunArtifacts:
        """Train until ``total_steps`` environment steps or until ``stop(agent)`` is true."""
        total = self.cfg.total_steps if total_steps is None else total_steps
        while self.steps < total:
            self.train_round()
            if stop is not None and stop(self):
                break
        return self.artifacts

    # evaluation

    def evaluate_skills(self, steps_per_skill: int | None = None, nodes=None) -> dict:
        """Visit-count grid (top row first) for every node's Boltzmann policy.

        Internal nodes descend uniformly to a leaf at the start of each episode.
        """
        steps_per_skill = self.cfg.eval_steps if steps_per_skill is None else steps_per_skill
        spec = self.env_spec
        env = GridEnv(spec)
        grids = {}
        rng = self.eval_rng
        for node in nodes if nodes is not None else self.tree.nodes():
            grid = np.zeros((spec.height, spec.width), dtype=np.int64)
            counted = 0
            while counted < steps_per_skill:
                leaf = node
                while not leaf.is_leaf:
                    leaf = leaf.children[int(rng.integers(len(leaf.children)))]
                act = self._action_sampler(leaf)
                obs = env.reset()
                done = False
                while not done and counted < steps_per_skill:
                    obs, _, done = env.step(act(obs, rng))
                    x, y = env.pos
                    grid[spec.height - 1 - y, x] += 1
                    counted += 1
            grids[node.id] = grid
        self.artifacts.densities = grids
        return grids

    def greedy_value(self) -> float:
        return max(self.qt.q[((), v)] for v in range(len(self.tree.root.children)))


@dataclass
class TransferResult:
    curve: list
    baseline: list
    metrics: list
    baseline_metrics: list


def run_transfer(agent: Elsim, new_env: GridSpec, episodes: int,
                 beta_explore: float | None = None, seed: int | None = None) -> TransferResult:
    """Reuse ``agent``'s frozen skills on ``new_env`` with a fresh tree-policy.

    Policies, discriminators and the tree shape are left untouched; only the
    tree-policy Q-values and visit counts are reset. A uniform tree-policy over
    the same skills is run alongside as a baseline.
    """
    cfg = dataclasses.replace(agent.cfg, seed=agent.cfg.seed if seed is None else seed, n_envs=1)
    bonus = cfg.beta_explore if beta_explore is None else beta_explore
    qt = TreeQTable.for_tree(agent.tree)
    qt.reset()
    # the tree object is shared; nothing below mutates networks, buffers or phases
    frozen = Elsim(cfg, new_env, tree=agent.tree, qt=qt)
    baseline = Elsim(dataclasses.replace(cfg, seed=cfg.seed + 1), new_env, tree=agent.tree,
                     qt=TreeQTable.for_tree(agent.tree))
    curve, base = [], []
    for _ in range(episodes):
        out = frozen.run_episode(learn=False, explore_bonus=bonus)
        frozen._record(out, None)
        curve.append(out.r_tree)
        out = baseline.run_episode(learn=False, uniform=True)
        baseline._record(out, None)
        base.append(out.r_tree)
    return TransferResult(curve, base, frozen.artifacts.metrics, baseline.artifacts.metrics)

"""Deterministic gridworlds with normalized coordinate observations.

Cells are ``(x, y)`` with ``y`` growing upwards; the grid boundary is
implicit (no outer wall cells). Actions: 0=N, 1=S, 2=E, 3=W.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ElsimError

N, S, E, W = range(4)
MOVES = {N: (0, 1), S: (0, -1), E: (1, 0), W: (-1, 0)}
ACTION_COUNT = 4


@dataclass(frozen=True)
class GridSpec:
    width: int
    height: int
    walls: frozenset = frozenset()
    start: tuple = (0, 0)
    reward_cells: dict = field(default_factory=dict)
    episode_len: int = 100
    doors: frozenset = frozenset()
    name: str = "grid"

    def __post_init__(self):
        if self.width < 2 or self.height < 2:
            raise ElsimError("grids need at least two rows and two columns")
        if self.start in self.walls:
            raise ElsimError("start cell is a wall")
        if set(self.reward_cells) & set(self.walls):
            raise ElsimError("reward cells overlap walls")
        if not self.in_bounds(self.start):
            raise ElsimError("start cell is out of bounds")

    def in_bounds(self, cell) -> bool:
        return 0 <= cell[0] < self.width and 0 <= cell[1] < self.height

    def free_cells(self) -> list[tuple]:
        return [(x, y) for y in range(self.height) for x in range(self.width)
                if (x, y) not in self.walls]

    def normalize(self, cell) -> np.ndarray:
        return np.array([cell[0] / (self.width - 1), cell[1] / (self.height - 1)])

    def cell_of(self, obs) -> tuple:
        return (int(round(obs[0] * (self.width - 1))), int(round(obs[1] * (self.height - 1))))


class StepResult(NamedTuple):
    next_obs: np.ndarray
    extrinsic_reward: float
    done: bool


class GridEnv:
    def __init__(self, spec: GridSpec):
        self.spec = spec
        self.pos = spec.start
        self.t = 0
        self._ready = False

    @property
    def observation_dim(self) -> int:
        return 2

    @property
    def action_count(self) -> int:
        return ACTION_COUNT

    def reset(self) -> np.ndarray:
        self.pos = self.spec.start
        self.t = 0
        self._ready = True
        return self.spec.normalize(self.pos)

    def step(self, action: int) -> StepResult:
        if not self._ready:
            raise ElsimError("step called on a finished or un-reset episode")
        dx, dy = MOVES[action]
        nxt = (self.pos[0] + dx, self.pos[1] + dy)
        if self.spec.in_bounds(nxt) and nxt not in self.spec.walls:
            self.pos = nxt
        self.t += 1
        done = self.t >= self.spec.episode_len
        if done:
            self._ready = False
        return StepResult(self.spec.normalize(self.pos),
                          float(self.spec.reward_cells.get(self.pos, 0.0)), done)


def reset(env: GridEnv) -> np.ndarray:
    return env.reset()


def step(env: GridEnv, action: int) -> StepResult:
    return env.step(action)


def make_empty(size: int = 11, episode_len: int = 100) -> GridSpec:
    return GridSpec(size, size, start=(size // 2, size // 2), episode_len=episode_len,
                    name="empty")


def make_four_rooms(size: int = 19, episode_len: int = 100) -> GridSpec:
    """Four square rooms split by a central cross of walls, one door per wall arm."""
    mid = size // 2
    q1, q3 = mid // 2, mid + 1 + mid // 2
    doors = frozenset({(mid, q1), (mid, q3), (q1, mid), (q3, mid)})
    walls = {(mid, y) for y in range(size)} | {(x, mid) for x in range(size)}
    return GridSpec(size, size, walls=frozenset(walls - doors), start=(1, 1),
                    episode_len=episode_len, doors=doors, name="four-rooms")


def make_vertical_wall(rewarded: bool = False, size: int = 19, episode_len: int = 100) -> GridSpec:
    """Full-height wall in the middle column with one gap near the bottom.

    The gap sits on the start's row. The rewarded variant pays 1 on every
    cell right of the wall.
    """
    mid = size // 2
    gap = (mid, 2)
    walls = frozenset((mid, y) for y in range(size)) - {gap}
    rewards = {}
    if rewarded:
        rewards = {(x, y): 1.0 for x in range(mid + 1, size) for y in range(size)}
    return GridSpec(size, size, walls=walls, start=(2, 2), reward_cells=rewards,
                    episode_len=episode_len, doors=frozenset({gap}),
                    name="wall-reward" if rewarded else "wall")


ENV_FACTORIES = {
    "empty": make_empty,
    "four-rooms": make_four_rooms,
    "wall": lambda: make_vertical_wall(False),
    "wall-reward": lambda: make_vertical_wall(True),
}


def make_env(name: str) -> GridSpec:
    try:
        return ENV_FACTORIES[name]()
    except KeyError:
        raise ElsimError(f"unknown environment {name!r}; choose from {sorted(ENV_FACTORIES)}") from None


def ascii_layout(spec: GridSpec) -> str:
    """Top row first: '#' wall, 'S' start, '+' reward, '.' free."""
    rows = []
    for y in range(spec.height - 1, -1, -1):
        row = []
        for x in range(spec.width):
            c = (x, y)
            if c in spec.walls:
                row.append("#")
            elif c == spec.start:
                row.append("S")
            elif c in spec.reward_cells:
                row.append("+")
            else:
                row.append(".")
        rows.append("".join(row))
    return "\n".join(rows) + "\n"


def room_map(spec: GridSpec) -> dict:
    """Label each free non-door cell with the index of its connected room."""
    labels: dict = {}
    room = 0
    for cell in spec.free_cells():
        if cell in labels or cell in spec.doors:
            continue
        queue = deque([cell])
        labels[cell] = room
        while queue:
            x, y = queue.popleft()
            for dx, dy in MOVES.values():
                n = (x + dx, y + dy)
                if (spec.in_bounds(n) and n not in spec.walls and n not in spec.doors
                        and n not in labels):
                    labels[n] = room
                    queue.append(n)
        room += 1
    return labels

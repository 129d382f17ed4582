"""A small deterministic gridworld with one-hot position observations."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..tensor import RngLike, as_generator

# up, right, down, left as (dx, dy)
MOVES = ((0, -1), (1, 0), (0, 1), (-1, 0))


class EpisodeOver(RuntimeError):
    pass


@dataclass
class GridWorld:
    width: int = 5
    height: int = 5
    goal: tuple[int, int] = (4, 4)
    obstacles: frozenset = frozenset({(1, 3), (2, 2), (3, 1)})
    max_steps: int = 20
    start: tuple[int, int] | None = None
    pos: tuple[int, int] = field(default=(0, 0), init=False)
    t: int = field(default=0, init=False)
    done: bool = field(default=True, init=False)

    def __post_init__(self):
        self.goal = tuple(self.goal)
        self.obstacles = frozenset(tuple(o) for o in self.obstacles)
        for p in [self.goal, *self.obstacles] + ([tuple(self.start)] if self.start else []):
            if not self.in_bounds(p):
                raise ValueError(f"position {p} outside a {self.width}x{self.height} grid")
        if self.goal in self.obstacles:
            raise ValueError("goal sits on an obstacle")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")

    @property
    def n_states(self) -> int:
        return self.width * self.height

    n_actions = len(MOVES)

    def in_bounds(self, p) -> bool:
        return 0 <= p[0] < self.width and 0 <= p[1] < self.height

    def index(self, p) -> int:
        return p[1] * self.width + p[0]

    def free_cells(self) -> list[tuple[int, int]]:
        return [(x, y) for y in range(self.height) for x in range(self.width)
                if (x, y) not in self.obstacles and (x, y) != self.goal]

    def observe(self, p=None) -> np.ndarray:
        o = np.zeros(self.n_states)
        o[self.index(self.pos if p is None else p)] = 1.0
        return o

    def move(self, p, action: int):
        dx, dy = MOVES[action]
        q = (p[0] + dx, p[1] + dy)
        return p if not self.in_bounds(q) or q in self.obstacles else q

    def reset(self, rng: RngLike) -> int:
        if self.start is not None:
            self.pos = tuple(self.start)
        else:
            cells = self.free_cells()
            self.pos = cells[int(as_generator(rng).integers(len(cells)))]
        self.t = 0
        self.done = False
        return self.index(self.pos)

    def step(self, action: int) -> tuple[int, float, bool]:
        if self.done:
            raise EpisodeOver("step() called on a finished episode; call reset() first")
        if not 0 <= action < self.n_actions:
            raise ValueError(f"invalid action {action}")
        self.pos = self.move(self.pos, action)
        self.t += 1
        reward = 1.0 if self.pos == self.goal else 0.0
        self.done = reward > 0 or self.t >= self.max_steps
        return self.index(self.pos), reward, self.done


def env_reset(env: GridWorld, rng: RngLike) -> np.ndarray:
    env.reset(rng)
    return env.observe()


def env_step(env: GridWorld, action: int) -> tuple[np.ndarray, float, bool]:
    _, r, done = env.step(action)
    return env.observe(), r, done


@dataclass
class Trajectory:
    """States are grid indices; ``states[t]`` is the observation before ``actions[t]``."""

    states: list[int] = field(default_factory=list)
    actions: list[int] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    next_states: list[int] = field(default_factory=list)
    terminal: bool = False

    def __len__(self):
        return len(self.actions)


def episodic_return(traj_or_rewards) -> float:
    rewards = traj_or_rewards.rewards if isinstance(traj_or_rewards, Trajectory) else traj_or_rewards
    total = 0.0
    for r in rewards:
        total += r
    return total

"""FIFO replay buffer of (o_t, a_t, r_{t+1}, o_{t+1}, done) transitions."""
from __future__ import annotations

from ..tensor import RngLike, as_generator


class ReplayBuffer:
    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: list = []
        self._next = 0

    def __len__(self):
        return len(self._items)

    def push(self, transition):
        if len(self._items) < self.capacity:
            self._items.append(transition)
        else:
            self._items[self._next] = transition
        self._next = (self._next + 1) % self.capacity

    def items(self) -> list:
        """Contents oldest first."""
        if len(self._items) < self.capacity:
            return list(self._items)
        return self._items[self._next:] + self._items[:self._next]

    def sample(self, batch: int, rng: RngLike) -> list:
        if batch < 1 or len(self._items) < batch:
            raise ValueError(f"cannot sample {batch} transitions from a buffer holding {len(self._items)}")
        idx = as_generator(rng).choice(len(self._items), size=batch, replace=False)
        return [self._items[i] for i in idx]

    def reset(self):
        self._items = []
        self._next = 0

    def copy(self) -> "ReplayBuffer":
        out = ReplayBuffer(self.capacity)
        out._items = list(self._items)
        out._next = self._next
        return out

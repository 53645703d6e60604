"""Ring replay buffer for joint market transitions."""

from __future__ import annotations

import numpy as np


class ReplayBuffer:
    """Fixed-capacity ring of ``(state, joint action, rewards, next state)``.

    Storage grows geometrically up to ``capacity`` so short runs do not
    allocate the full ring.
    """

    def __init__(self, capacity: int, state_dim: int, action_dim: int, n_agents: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.dims = (state_dim, action_dim, n_agents)
        self._alloc = 0
        self.s = self.a = self.r = self.s2 = None
        self._grow(min(self.capacity, 1024))
        self.size = 0
        self.head = 0  # next write position
        self.inserted = 0

    def _grow(self, n: int) -> None:
        sd, ad, na = self.dims
        new = [np.zeros((n, sd)), np.zeros((n, ad)), np.zeros((n, na)), np.zeros((n, sd))]
        if self._alloc:
            for arr, old in zip(new, (self.s, self.a, self.r, self.s2)):
                arr[: self._alloc] = old
        self.s, self.a, self.r, self.s2 = new
        self._alloc = n

    def __len__(self) -> int:
        return self.size

    def add(self, s, a, r, s2) -> None:
        if self.head >= self._alloc and self._alloc < self.capacity:
            self._grow(min(self.capacity, 2 * self._alloc))
        i = self.head
        self.s[i], self.a[i], self.r[i], self.s2[i] = s, a, r, s2
        self.head = (self.head + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.inserted += 1

    def ordered(self) -> tuple[np.ndarray, ...]:
        """Contents from oldest to newest."""
        if self.size < self.capacity:
            idx = np.arange(self.size)
        else:
            idx = (self.head + np.arange(self.capacity)) % self.capacity
        return self.s[idx], self.a[idx], self.r[idx], self.s2[idx]

    def sample(self, batch_size: int, rng: np.random.Generator) -> tuple[np.ndarray, ...]:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, self.size, size=batch_size)
        return self.s[idx], self.a[idx], self.r[idx], self.s2[idx]

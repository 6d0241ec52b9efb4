"""Tabular soft Q-learning with uniform experience replay."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import N_ACTIONS
from .policies import POLICY_FLOOR, CategoricalPolicy


class ReplayBuffer:
    """Fixed-capacity ring buffer of ``(s, a, r, s', terminal)`` transitions."""

    def __init__(self, capacity: int = 10_000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.s = np.zeros(capacity, dtype=np.int64)
        self.a = np.zeros(capacity, dtype=np.int64)
        self.r = np.zeros(capacity)
        self.s2 = np.zeros(capacity, dtype=np.int64)
        self.term = np.zeros(capacity, dtype=bool)
        self._head = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def add(self, s: int, a: int, r: float, s2: int, terminal: bool) -> None:
        i = self._head
        self.s[i], self.a[i], self.r[i], self.s2[i], self.term[i] = s, a, r, s2, terminal
        self._head = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> "Transitions":
        if self._size == 0:
            raise ValueError("replay buffer is empty")
        idx = rng.integers(self._size, size=batch_size)
        return Transitions(self.s[idx], self.a[idx], self.r[idx], self.s2[idx], self.term[idx])


@dataclass(frozen=True)
class Transitions:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    terminal: np.ndarray


def soft_value(q: np.ndarray, temperature: float) -> np.ndarray:
    """``tau * log sum_a exp(Q / tau)`` along the last axis, computed stably."""
    z = np.asarray(q, dtype=float) / temperature
    m = z.max(axis=-1)
    return temperature * (m + np.log(np.exp(z - m[..., None]).sum(axis=-1)))


class SoftQAgent:
    """Boltzmann policy over a Q table trained towards soft Bellman targets.

    Duplicate ``(s, a)`` pairs in a batch are averaged before the update, so
    the effective step per pair never exceeds ``lr``.
    """

    def __init__(self, n_states: int, lr: float = 0.1, discount: float = 0.99, temperature: float = 0.05,
                 floor: float = POLICY_FLOOR):
        if not 0.0 < discount < 1.0:
            raise ValueError("discount must lie in (0, 1)")
        if lr <= 0 or temperature <= 0:
            raise ValueError("learning rate and temperature must be positive")
        self.q = np.zeros((n_states, N_ACTIONS))
        self.lr = lr
        self.discount = discount
        self.temperature = temperature
        self.floor = floor
        self._pi = None
        self._v = None

    @property
    def n_states(self) -> int:
        return self.q.shape[0]

    def _refresh(self) -> None:
        # one pass gives both the Boltzmann policy and the soft state values
        z = self.q / self.temperature
        m = z.max(axis=1, keepdims=True)
        e = np.exp(z - m)
        tot = e.sum(axis=1, keepdims=True)
        t = np.maximum(e / tot, self.floor)
        self._pi = t / t.sum(axis=1, keepdims=True)
        self._v = self.temperature * (m[:, 0] + np.log(tot[:, 0]))

    def invalidate(self) -> None:
        """Drop cached policy and values after editing ``q`` directly."""
        self._pi = self._v = None

    def policy_table(self) -> np.ndarray:
        if self._pi is None:
            self._refresh()
        return self._pi

    def soft_values(self) -> np.ndarray:
        if self._v is None:
            self._refresh()
        return self._v

    def policy(self) -> CategoricalPolicy:
        return CategoricalPolicy(self.policy_table(), floor=0.0)

    def td_targets(self, batch: Transitions) -> np.ndarray:
        v = self.soft_values()[batch.s2]
        return batch.r + self.discount * np.where(batch.terminal, 0.0, v)

    def update(self, batch: Transitions) -> float:
        """One averaged soft-Q step; returns the mean absolute TD error."""
        td = self.td_targets(batch) - self.q[batch.s, batch.a]
        flat = batch.s * N_ACTIONS + batch.a
        size = self.q.size
        counts = np.bincount(flat, minlength=size)
        hit = counts > 0
        self.q.flat[hit] += self.lr * np.bincount(flat, weights=td, minlength=size)[hit] / counts[hit]
        self.invalidate()
        return float(np.abs(td).mean())


def rl_update(agent: SoftQAgent, batch: Transitions) -> SoftQAgent:
    agent.update(batch)
    return agent

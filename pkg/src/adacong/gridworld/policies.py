"""Tabular categorical policies, the BFS expert, and behaviour cloning."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import N_ACTIONS, Episode, GridEnv

POLICY_FLOOR = 1e-6


class CategoricalPolicy:
    """Per-state distribution over the five actions.

    Rows are floored at ``floor`` and renormalised, so ``-log pi`` is always
    finite.
    """

    def __init__(self, table, floor: float = POLICY_FLOOR):
        t = np.asarray(table, dtype=float)
        if t.ndim != 2 or t.shape[1] != N_ACTIONS:
            raise ValueError(f"policy table must be (n_states, {N_ACTIONS})")
        if np.any(t < 0) or np.any(np.abs(t.sum(axis=1) - 1.0) > 1e-6):
            raise ValueError("policy rows must be probability vectors")
        if floor > 0:
            t = np.maximum(t, floor)
            t = t / t.sum(axis=1, keepdims=True)
        self.table = t
        self.floor = floor

    @classmethod
    def uniform(cls, n_states: int) -> "CategoricalPolicy":
        return cls(np.full((n_states, N_ACTIONS), 1.0 / N_ACTIONS))

    @classmethod
    def boltzmann(cls, q: np.ndarray, temperature: float, floor: float = POLICY_FLOOR) -> "CategoricalPolicy":
        return cls(boltzmann_table(q, temperature), floor)

    @property
    def n_states(self) -> int:
        return self.table.shape[0]

    def __getitem__(self, state) -> np.ndarray:
        return self.table[state]

    def sample(self, state: int, rng: np.random.Generator) -> int:
        return int(sample_rows(self.table[state][None, :], rng)[0])

    def greedy(self, state: int) -> int:
        return int(np.argmax(self.table[state]))


def boltzmann_table(q: np.ndarray, temperature: float) -> np.ndarray:
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    z = np.asarray(q, dtype=float) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def sample_rows(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row by inverting the row CDF."""
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(len(probs)) * cdf[:, -1]
    return np.minimum((u[:, None] >= cdf).sum(axis=1), probs.shape[1] - 1)


@dataclass(frozen=True)
class Demonstrations:
    states: np.ndarray
    actions: np.ndarray
    episode_returns: tuple[float, ...]
    episode_lengths: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.states)


def optimal_actions(env: GridEnv, dist: np.ndarray | None = None) -> list[list[int]]:
    """Actions that reduce the BFS distance by one, per state (empty for walls, lava, goal)."""
    dist = env.shortest_distances() if dist is None else dist
    out = []
    for s in range(env.n_states):
        if dist[s] <= 0:
            out.append([])
            continue
        out.append([a for a in range(N_ACTIONS - 1)
                    if dist[env.next_state(s, a)] == dist[s] - 1])
    return out


def generate_expert_demos(env: GridEnv, n_episodes: int, seed: int | np.random.Generator | None = None) -> Demonstrations:
    """Shortest-path rollouts from the start; tied actions are sampled uniformly.

    Raises:
        ValueError: if the goal is unreachable from the start.
    """
    if n_episodes < 1:
        raise ValueError("need at least one demonstration episode")
    rng = np.random.default_rng(seed)
    dist = env.shortest_distances()
    if dist[env.index(env.start)] < 0:
        raise ValueError(f"layout '{env.name}' is unsolvable")
    choices = optimal_actions(env, dist)
    states, actions, rets, lens = [], [], [], []
    for _ in range(n_episodes):
        ep = Episode(env)
        s = ep.state
        while not ep.done:
            opts = choices[s]
            a = opts[rng.integers(len(opts))]
            states.append(s)
            actions.append(a)
            s, _, _ = ep.step(a)
        rets.append(ep.total_reward)
        lens.append(ep.steps)
    return Demonstrations(np.array(states), np.array(actions), tuple(rets), tuple(lens))


def behavior_clone(demos: Demonstrations, n_states: int, smoothing: float = 1.0) -> CategoricalPolicy:
    """Count-based cloning: ``(n(s,a) + l) / (n(s) + 5 l)``; unseen states are uniform."""
    if len(demos) == 0:
        raise ValueError("no demonstrations to clone")
    if smoothing < 0:
        raise ValueError("smoothing must be non-negative")
    counts = np.zeros((n_states, N_ACTIONS))
    np.add.at(counts, (demos.states, demos.actions), 1.0)
    totals = counts.sum(axis=1, keepdims=True)
    table = np.full((n_states, N_ACTIONS), 1.0 / N_ACTIONS)
    seen = totals[:, 0] > 0
    table[seen] = (counts[seen] + smoothing) / (totals[seen] + N_ACTIONS * smoothing)
    return CategoricalPolicy(table)


def kl(p: np.ndarray, q: np.ndarray) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    mask = p > 0
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))


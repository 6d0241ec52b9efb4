"""Fully observable gridworlds with lava, walls and doorways.

Layouts are text fixtures (see ``layouts/``)::

    '#' wall   'L' lava   'D' doorway   'S' start   'G' goal   '.' free

The agent's state is its cell, encoded as ``y * width + x``. Five actions:
left, right, up, down, stay. Moves into walls or off the map leave the
agent in place. Doorways are ordinary passable cells; there is no toggle
action in this action set.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

MAX_STEPS = 100
N_ACTIONS = 5
ACTION_NAMES = ("left", "right", "up", "down", "stay")
_MOVES = np.array([(-1, 0), (1, 0), (0, -1), (0, 1), (0, 0)])  # (dx, dy)


class Variant(enum.Enum):
    LAVA1 = "lava1"
    LAVA2 = "lava2"
    DOOR = "door"


@dataclass(frozen=True)
class GridEnv:
    width: int
    height: int
    walls: frozenset
    lava: frozenset
    doors: frozenset
    start: tuple[int, int]
    goal: tuple[int, int]
    max_steps: int = MAX_STEPS
    name: str = "custom"
    _next: np.ndarray = field(default=None, repr=False, compare=False)
    _lava: np.ndarray = field(default=None, repr=False, compare=False)
    _dist: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        for cell, what in ((self.start, "start"), (self.goal, "goal")):
            if not self.in_bounds(cell) or cell in self.walls or cell in self.lava:
                raise ValueError(f"{what} {cell} is not a free cell")
        nxt = np.empty((self.n_states, N_ACTIONS), dtype=np.int64)
        for s in range(self.n_states):
            x, y = self.cell(s)
            for a, (dx, dy) in enumerate(_MOVES):
                c = (x + dx, y + dy)
                nxt[s, a] = self.index(c) if self.in_bounds(c) and c not in self.walls else s
        object.__setattr__(self, "_next", nxt)
        cells = [self.cell(s) for s in range(self.n_states)]
        object.__setattr__(self, "_lava", np.array([c in self.lava for c in cells]))
        object.__setattr__(self, "_dist", np.array([abs(x - self.goal[0]) + abs(y - self.goal[1]) for x, y in cells]))
        if self.shortest_distances()[self.index(self.start)] < 0:
            raise ValueError(f"layout '{self.name}' has no safe path from start to goal")

    # -- construction ----------------------------------------------------
    @classmethod
    def from_text(cls, text: str, name: str = "custom", max_steps: int = MAX_STEPS) -> "GridEnv":
        # comment lines start with "# "; grid rows never contain spaces
        rows = [ln.rstrip() for ln in text.splitlines() if ln.strip() and not ln.startswith("# ")]
        if not rows:
            raise ValueError("empty layout")
        width = len(rows[0])
        if any(len(r) != width for r in rows):
            raise ValueError("layout rows must all have the same width")
        sets = {"#": set(), "L": set(), "D": set()}
        start = goal = None
        for y, row in enumerate(rows):
            for x, ch in enumerate(row):
                if ch in sets:
                    sets[ch].add((x, y))
                elif ch == "S":
                    start = (x, y)
                elif ch == "G":
                    goal = (x, y)
                elif ch != ".":
                    raise ValueError(f"unknown layout character {ch!r} at row {y}, column {x}")
        if start is None or goal is None:
            raise ValueError("layout needs exactly one 'S' and one 'G'")
        return cls(width, len(rows), frozenset(sets["#"]), frozenset(sets["L"]), frozenset(sets["D"]),
                   start, goal, max_steps, name)

    @classmethod
    def load(cls, variant: Variant | str) -> "GridEnv":
        variant = Variant(variant)
        text = resources.files(__package__).joinpath("layouts", f"{variant.value}.txt").read_text()
        return cls.from_text(text, variant.value)

    # -- geometry --------------------------------------------------------
    @property
    def n_states(self) -> int:
        return self.width * self.height

    def in_bounds(self, cell) -> bool:
        return 0 <= cell[0] < self.width and 0 <= cell[1] < self.height

    def index(self, cell) -> int:
        return cell[1] * self.width + cell[0]

    def cell(self, state: int) -> tuple[int, int]:
        return state % self.width, state // self.width

    def manhattan(self, state: int) -> int:
        return int(self._dist[state])

    def next_state(self, state: int, action: int) -> int:
        return int(self._next[state, action])

    def is_lava(self, state: int) -> bool:
        return bool(self._lava[state])

    def free_states(self) -> list[int]:
        return [s for s in range(self.n_states) if self.cell(s) not in self.walls and self.cell(s) not in self.lava]

    def shortest_distances(self) -> np.ndarray:
        """BFS distance to the goal over safe cells; -1 where the goal is unreachable."""
        dist = np.full(self.n_states, -1, dtype=np.int64)
        g = self.index(self.goal)
        dist[g] = 0
        frontier = [g]
        safe = np.zeros(self.n_states, dtype=bool)
        safe[self.free_states()] = True
        while frontier:
            nxt = []
            for s in frontier:
                # predecessors: states p with next_state(p, a) == s
                x, y = self.cell(s)
                for dx, dy in _MOVES[:4]:
                    c = (x - dx, y - dy)
                    if not self.in_bounds(c):
                        continue
                    p = self.index(c)
                    if safe[p] and dist[p] < 0 and s in self._next[p]:
                        dist[p] = dist[s] + 1
                        nxt.append(p)
            frontier = nxt
        return dist

    # -- dynamics --------------------------------------------------------
    def transition(self, state: int, action: int, step_count: int) -> tuple[int, float, bool]:
        """One move. ``step_count`` counts the steps already taken before this one.

        Returns ``(next_state, reward, terminated)``; running out of steps is
        reported separately by :class:`Episode` because it is not terminal for
        bootstrapping.
        """
        if not 0 <= state < self.n_states:
            raise ValueError(f"state {state} out of bounds")
        if not 0 <= action < N_ACTIONS:
            raise ValueError(f"action {action} not in 0..{N_ACTIONS - 1}")
        s2 = int(self._next[state, action])
        if self._lava[s2]:
            return s2, -1.0, True
        d = int(self._dist[s2])
        if d == 0:
            return s2, 10.0 - 9.0 * step_count / self.max_steps, True
        return s2, -d / 100.0, False

    def render(self, state: int | None = None) -> str:
        lines = []
        for y in range(self.height):
            row = []
            for x in range(self.width):
                c = (x, y)
                ch = "#" if c in self.walls else "L" if c in self.lava else "D" if c in self.doors else "."
                if c == self.start:
                    ch = "S"
                if c == self.goal:
                    ch = "G"
                if state is not None and self.index(c) == state:
                    ch = "A"
                row.append(ch)
            lines.append("".join(row))
        return "\n".join(lines)


class Episode:
    """Mutable episode state on top of an immutable :class:`GridEnv`."""

    def __init__(self, env: GridEnv):
        self.env = env
        self.reset()

    def reset(self) -> int:
        self.state = self.env.index(self.env.start)
        self.steps = 0
        self.done = False
        self.truncated = False
        self.total_reward = 0.0
        return self.state

    def step(self, action: int) -> tuple[int, float, bool]:
        if self.done:
            raise RuntimeError("episode is over; call reset()")
        s2, r, term = self.env.transition(self.state, action, self.steps)
        self.steps += 1
        self.state = s2
        self.total_reward += r
        self.truncated = not term and self.steps >= self.env.max_steps
        self.done = term or self.truncated
        return s2, r, term

"""Run records and seeded random streams shared by all experiments."""

from __future__ import annotations

import hashlib
import json
import zlib
from dataclasses import dataclass, field
from typing import Any

import numpy as np

CSV_COLUMNS = ("run_id", "seed", "step", "split", "metric", "value")


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent Philox stream for one subsystem of a seeded run.

    The master seed and the subsystem name together select the stream, so
    adding draws to one subsystem never perturbs another.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=(zlib.crc32(name.encode()),))
    return np.random.Generator(np.random.Philox(ss))


def config_hash(config: Any) -> str:
    """sha256 of the canonical JSON form (sorted keys, no whitespace)."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(blob.encode()).hexdigest()


def _jsonable(obj):
    if hasattr(obj, "value") and not isinstance(obj, (int, float)):
        return obj.value  # enums
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


@dataclass
class RunRecord:
    """One seeded run: a metric time series plus whatever the run wants to keep.

    ``rows`` holds ``(step, split, metric, value)`` tuples in emission order.
    ``extras`` is for non-series artefacts such as split index sets.
    """

    run_id: str
    seed: int
    config_hash: str = ""
    rows: list[tuple[int, str, str, float]] = field(default_factory=list)
    extras: dict[str, Any] = field(default_factory=dict)

    def log(self, step: int, split: str, metric: str, value: float) -> None:
        self.rows.append((int(step), split, metric, float(value)))

    def series(self, metric: str, split: str | None = None) -> tuple[np.ndarray, np.ndarray]:
        pts = [(s, v) for s, sp, m, v in self.rows if m == metric and (split is None or sp == split)]
        if not pts:
            return np.empty(0, dtype=int), np.empty(0)
        steps, values = zip(*pts)
        return np.asarray(steps), np.asarray(values)

    def final(self, metric: str, split: str | None = None) -> float:
        _, values = self.series(metric, split)
        if values.size == 0:
            raise KeyError(f"no '{metric}' rows in run {self.run_id}")
        return float(values[-1])

    def metrics(self) -> set[str]:
        return {m for _, _, m, _ in self.rows}

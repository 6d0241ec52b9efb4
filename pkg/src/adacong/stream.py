"""Sliding-window conformal calibration for a policy that keeps changing.

The window holds the most recent ``capacity`` scores. Every update appends a
batch, recomputes the window quantile, and blends it into the running value
with an exponential moving average. The running value is warm-started from a
reference (static) quantile.
"""

from __future__ import annotations

import math
from typing import Iterable

import numpy as np

from .conformal import CalibrationSet, quantile_index


class SlidingCalibrator:
    """Single-writer streaming calibrator.

    Attributes:
        capacity: window size N.
        batch_size: number of scores expected per update (m).
        alpha: miscoverage level for the window quantile.
        smoothing: EMA factor in (0, 1]; 1 means "use the raw window quantile".
        current_quantile: the smoothed quantile used to build prediction sets.
    """

    def __init__(self, capacity: int, batch_size: int, alpha: float = 0.1,
                 smoothing: float = 0.1, initial_quantile: float = math.inf):
        if capacity < 1 or batch_size < 1:
            raise ValueError("capacity and batch size must be positive")
        if batch_size > capacity:
            raise ValueError(f"batch size {batch_size} exceeds window capacity {capacity}")
        if not 0.0 < alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if not 0.0 < smoothing <= 1.0:
            raise ValueError("smoothing must lie in (0, 1]")
        self.capacity = capacity
        self.batch_size = batch_size
        self.alpha = alpha
        self.smoothing = smoothing
        self.current_quantile = float(initial_quantile)
        self.raw_quantile = float(initial_quantile)
        self.n_updates = 0
        self._buf = np.empty(capacity, dtype=float)
        self._head = 0  # next write position
        self._count = 0

    @classmethod
    def warm_start(cls, reference_scores: CalibrationSet | Iterable[float], reference_quantile: float,
                   capacity: int, batch_size: int, alpha: float = 0.1,
                   smoothing: float = 0.1) -> "SlidingCalibrator":
        cal = cls(capacity, batch_size, alpha, smoothing, initial_quantile=reference_quantile)
        scores = reference_scores.scores if isinstance(reference_scores, CalibrationSet) else reference_scores
        scores = np.asarray(list(scores), dtype=float)
        if not np.all(np.isfinite(scores)):
            raise ValueError("reference scores must be finite")
        cal._extend(scores)
        return cal

    def _extend(self, batch: np.ndarray) -> None:
        # oldest-first eviction; a batch longer than the window keeps its newest entries
        batch = batch[-self.capacity:]
        n = batch.size
        idx = (self._head + np.arange(n)) % self.capacity
        self._buf[idx] = batch
        self._head = (self._head + n) % self.capacity
        self._count = min(self._count + n, self.capacity)

    def _ordered(self) -> np.ndarray:
        if self._count < self.capacity:
            return self._buf[:self._count].copy()
        return np.roll(self._buf, -self._head)

    @property
    def window(self) -> tuple[float, ...]:
        return tuple(self._ordered().tolist())

    def __len__(self) -> int:
        return self._count

    def window_quantile(self) -> float:
        """Conformal quantile of the current window.

        A window too small for the finite-sample rule at this alpha falls back
        to its largest score so the running quantile stays finite.
        """
        if self._count == 0:
            raise ValueError("window is empty")
        scores = self._buf[:self._count]
        k = quantile_index(scores.size, self.alpha)
        if k > scores.size:
            return float(scores.max())
        return float(np.partition(scores, k - 1)[k - 1])  # k-th smallest without a full sort

    def update(self, new_scores) -> "SlidingCalibrator":
        batch = np.asarray(new_scores, dtype=float).ravel()
        if batch.size != self.batch_size:
            raise ValueError(f"expected {self.batch_size} scores, got {batch.size}")
        if not np.all(np.isfinite(batch)):
            raise ValueError("scores must be finite")
        self._extend(batch)
        self.raw_quantile = self.window_quantile()
        if math.isinf(self.current_quantile):
            self.current_quantile = self.raw_quantile
        else:
            g = self.smoothing
            self.current_quantile = (1.0 - g) * self.current_quantile + g * self.raw_quantile
        self.n_updates += 1
        return self

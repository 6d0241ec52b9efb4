"""Split conformal prediction primitives.

Nonconformity scores, the finite-sample corrected quantile, prediction sets
and empirical coverage. Everything here is a pure function over immutable
values, so calibrators can be shared freely between experiment workers.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

PROB_FLOOR = 1e-12
_SUM_TOL = 1e-6


class NonconformityRule(enum.Enum):
    RESIDUAL = "residual"
    CONFIDENCE = "confidence"
    NEG_LOG_PROB = "neg_log_prob"


@dataclass(frozen=True)
class CalibrationSet:
    """Held-out nonconformity scores.

    Scores are stored as given; ``sorted()`` returns a stable ascending copy.
    ``capacity`` is informational here (the sliding calibrator enforces it).
    """

    scores: tuple[float, ...]
    capacity: int | None = None

    def __post_init__(self):
        arr = np.asarray(self.scores, dtype=float)
        if arr.ndim != 1:
            raise ValueError("calibration scores must be one-dimensional")
        if not np.all(np.isfinite(arr)):
            raise ValueError("calibration scores must be finite")
        if self.capacity is not None and self.capacity < 1:
            raise ValueError("capacity must be a positive integer")
        object.__setattr__(self, "scores", tuple(float(s) for s in arr))

    @classmethod
    def from_scores(cls, scores: Iterable[float], capacity: int | None = None) -> "CalibrationSet":
        return cls(tuple(scores), capacity)

    def __len__(self) -> int:
        return len(self.scores)

    def sorted(self) -> np.ndarray:
        return np.sort(np.asarray(self.scores, dtype=float), kind="stable")


@dataclass(frozen=True)
class ConformalQuantile:
    value: float
    alpha: float
    n: int

    @property
    def is_infinite(self) -> bool:
        return math.isinf(self.value)


@dataclass(frozen=True)
class PredictionSet:
    members: frozenset[int]
    universe_size: int

    def __post_init__(self):
        if any(m < 0 or m >= self.universe_size for m in self.members):
            raise ValueError("prediction set members must lie in [0, K)")

    def __len__(self) -> int:
        return len(self.members)

    def __contains__(self, item: int) -> bool:
        return item in self.members


def quantile_index(n: int, alpha: float) -> int:
    """1-based order statistic used for the (1 - alpha) conformal quantile."""
    # exact ceil; (n + 1) * (1 - alpha) in floating point can land a hair above an integer
    k = math.ceil(round((n + 1) * (1.0 - alpha), 9))
    return max(k, 1)


def compute_quantile(scores: CalibrationSet | Sequence[float] | np.ndarray, alpha: float) -> ConformalQuantile:
    """Return the k-th smallest score with k = ceil((n + 1)(1 - alpha)).

    When k exceeds n the quantile is +inf, so every label is admitted.

    Raises:
        ValueError: if ``alpha`` is outside (0, 1) or ``scores`` is empty.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if isinstance(scores, CalibrationSet):
        arr = scores.sorted()
    else:
        arr = np.asarray(scores, dtype=float).ravel()
        if not np.all(np.isfinite(arr)):
            raise ValueError("calibration scores must be finite")
        arr = np.sort(arr, kind="stable")
    n = arr.size
    if n == 0:
        raise ValueError("cannot calibrate on an empty score set")
    k = quantile_index(n, alpha)
    value = math.inf if k > n else float(arr[k - 1])
    return ConformalQuantile(value=value, alpha=alpha, n=n)


def _threshold(quantile: ConformalQuantile | float) -> float:
    return quantile.value if isinstance(quantile, ConformalQuantile) else float(quantile)


def prediction_set(per_label_scores: Sequence[float], quantile: ConformalQuantile | float) -> PredictionSet:
    scores = np.asarray(per_label_scores, dtype=float).ravel()
    if scores.size < 1:
        raise ValueError("need at least one label score")
    members = np.flatnonzero(scores <= _threshold(quantile))
    return PredictionSet(frozenset(int(m) for m in members), int(scores.size))


def set_sizes(score_matrix: np.ndarray, quantile: ConformalQuantile | float) -> np.ndarray:
    """Prediction-set sizes for a batch; rows are samples, columns labels."""
    scores = np.asarray(score_matrix, dtype=float)
    if scores.ndim != 2:
        raise ValueError("score matrix must be 2-D (samples x labels)")
    return np.count_nonzero(scores <= _threshold(quantile), axis=1)


def _check_distribution(p: np.ndarray) -> None:
    if p.ndim != 1 or p.size == 0:
        raise ValueError("probability vector must be a non-empty 1-D array")
    if np.any(p < 0) or abs(p.sum() - 1.0) > _SUM_TOL:
        raise ValueError(f"not a probability vector (sum={p.sum():.8f})")


def score(rule: NonconformityRule, model_output, target) -> float:
    """Nonconformity of ``target`` under ``model_output``.

    Residual takes a scalar prediction and a scalar target. Confidence and
    NegLogProb take a probability vector and a label/action index.
    """
    if rule is NonconformityRule.RESIDUAL:
        return abs(float(target) - float(model_output))
    p = np.asarray(model_output, dtype=float)
    _check_distribution(p)
    idx = int(target)
    if not 0 <= idx < p.size:
        raise IndexError(f"target {idx} out of range for {p.size} labels")
    if rule is NonconformityRule.CONFIDENCE:
        return float(1.0 - p[idx])
    return float(-math.log(max(p[idx], PROB_FLOOR)))


def label_scores(rule: NonconformityRule, probs: np.ndarray) -> np.ndarray:
    """Score every candidate label at once (rows of ``probs`` are distributions)."""
    probs = np.asarray(probs, dtype=float)
    if rule is NonconformityRule.CONFIDENCE:
        return 1.0 - probs
    if rule is NonconformityRule.NEG_LOG_PROB:
        return -np.log(np.maximum(probs, PROB_FLOOR))
    raise ValueError("per-label scoring needs a classification rule")


def true_label_scores(rule: NonconformityRule, probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels, dtype=int)
    return label_scores(rule, probs[np.arange(len(labels)), labels])


def empirical_coverage(quantile: ConformalQuantile | float, test_scores: Sequence[float]) -> float:
    arr = np.asarray(test_scores, dtype=float)
    if arr.size == 0:
        raise ValueError("need at least one test score")
    return float(np.mean(arr <= _threshold(quantile)))

"""Uncertainty from prediction-set size, and guidance weights from uncertainty.

Two uncertainty mappings are provided: the normalised set size
``(|C| - 1) / (K - 1)`` used for classifiers, and the identity used for
policies. Weight rules turn one uncertainty (or a pair, for IL-vs-RL
arbitration) into a number in [0, 1]. Functions accept scalars or numpy
arrays and broadcast.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

_SUM_TOL = 1e-6


class MappingKind(enum.Enum):
    NORMALIZED_SET_SIZE = "normalized_set_size"
    IDENTITY = "identity"


@dataclass(frozen=True)
class UncertaintyMapping:
    kind: MappingKind
    K: int

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("universe size K must be >= 1")
        if self.kind is MappingKind.NORMALIZED_SET_SIZE and self.K < 2:
            raise ValueError("normalized set size is undefined for K=1")


def uncertainty(mapping: UncertaintyMapping, set_size):
    """Map a prediction-set size to an uncertainty.

    An empty set is treated as the least trustworthy outcome: 1.0 under the
    normalised mapping and K under the identity.
    """
    size = np.asarray(set_size)
    if np.any(size < 0) or np.any(size > mapping.K):
        raise ValueError(f"set size must lie in [0, {mapping.K}]")
    if mapping.kind is MappingKind.NORMALIZED_SET_SIZE:
        u = np.where(size == 0, 1.0, (size - 1) / (mapping.K - 1))
    else:
        u = np.where(size == 0, mapping.K, size).astype(float)
    return float(u) if u.ndim == 0 else u


class WeightKind(enum.Enum):
    EXP_DECAY = "exp_decay"
    HARD_ZERO = "hard_zero"
    RELATIVE_SOFTMAX = "relative_softmax"
    HARD_ARGMAX = "hard_argmax"


@dataclass(frozen=True)
class WeightRule:
    kind: WeightKind
    gamma: float = 10.0

    def __post_init__(self):
        if self.kind is WeightKind.EXP_DECAY and not self.gamma > 0:
            raise ValueError("exponential decay needs gamma > 0")

    @property
    def pairwise(self) -> bool:
        return self.kind in (WeightKind.RELATIVE_SOFTMAX, WeightKind.HARD_ARGMAX)

    @classmethod
    def exp_decay(cls, gamma: float) -> "WeightRule":
        return cls(WeightKind.EXP_DECAY, gamma)


def weight(rule: WeightRule, u, u_other=None):
    """Guidance weight for uncertainty ``u``.

    For the pairwise rules ``u`` is the guide's (imitation) uncertainty and
    ``u_other`` the learner's. Ties go to the learner under the hard rule and
    split evenly under the softmax.
    """
    u = np.asarray(u, dtype=float)
    if np.any(u < 0):
        raise ValueError("uncertainty must be non-negative")
    if rule.pairwise and u_other is None:
        raise ValueError(f"{rule.kind.value} needs the other policy's uncertainty")

    if rule.kind is WeightKind.EXP_DECAY:
        w = np.exp(-rule.gamma * u)
    elif rule.kind is WeightKind.HARD_ZERO:
        w = (u == 0).astype(float)
    else:
        v = np.asarray(u_other, dtype=float)
        if rule.kind is WeightKind.HARD_ARGMAX:
            w = (u < v).astype(float)
        else:
            # exp(-u) / (exp(-u) + exp(-v)), written as a logistic for stability
            w = 1.0 / (1.0 + np.exp(np.clip(u - v, -700.0, 700.0)))
    return float(w) if w.ndim == 0 else w


class HeuristicKind(enum.Enum):
    ENTROPY = "entropy"
    MSP = "msp"


def heuristic_uncertainty(kind: HeuristicKind, probs):
    """Entropy (normalised by log K) or 1 - max probability.

    Accepts a single distribution or a batch with one distribution per row.
    """
    p = np.asarray(probs, dtype=float)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    if p.shape[-1] < 1 or np.any(p < 0) or np.any(np.abs(p.sum(axis=-1) - 1.0) > _SUM_TOL):
        raise ValueError("malformed probability distribution")
    if kind is HeuristicKind.MSP:
        u = 1.0 - p.max(axis=-1)
    else:
        K = p.shape[-1]
        if K == 1:
            u = np.zeros(p.shape[0])
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                plogp = np.where(p > 0, p * np.log(p), 0.0)
            u = np.clip(-plogp.sum(axis=-1) / np.log(K), 0.0, 1.0)
    return float(u[0]) if single else u

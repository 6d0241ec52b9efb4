"""Conformal uncertainty for policies and the IL-vs-RL action controllers.

Modes:
    PURE_RL      sample from the RL policy.
    IBRL         take whichever of ``a_I`` / ``a_R`` has the larger Q value.
    SOFT_IBRL    sample between the two with probabilities softmax(Q / beta).
    ADACONG      take ``a_I`` with probability w(s) = RelativeSoftmax(u_I, u_R).
    HARD_ADACONG take ``a_I`` iff u_I < u_R.

Every mode first hands control to the RL policy with probability epsilon.
All modes consume the same random draws per step (epsilon coin, ``a_R``,
``a_I``, arbitration coin), so runs that end up choosing the same actions
follow the same trajectories under a shared seed.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from ..conformal import CalibrationSet, ConformalQuantile, compute_quantile
from ..stream import SlidingCalibrator
from ..weighting import WeightKind, WeightRule, weight
from .env import N_ACTIONS, Episode, GridEnv
from .policies import CategoricalPolicy, kl, sample_rows

_SOFT = WeightRule(WeightKind.RELATIVE_SOFTMAX)
_HARD = WeightRule(WeightKind.HARD_ARGMAX)


class Mode(enum.Enum):
    ADACONG = "adacong"
    HARD_ADACONG = "hard_adacong"
    IBRL = "ibrl"
    SOFT_IBRL = "soft_ibrl"
    PURE_RL = "pure_rl"


def epsilon(t: int, e: int, total_steps: int, total_episodes: int) -> float:
    """``min(0.5 t / S + 0.5 e / E, 1)``: the chance of deferring to the RL policy."""
    if total_steps < 1 or total_episodes < 1:
        raise ValueError("schedule totals must be positive")
    return min(0.5 * t / total_steps + 0.5 * e / total_episodes, 1.0)


def set_size(row: np.ndarray, quantile: float) -> int:
    """Size of ``{a : -log pi(a|s) <= q}`` for one policy row."""
    return int(np.count_nonzero(-np.log(row) <= quantile))


def policy_uncertainty(policy: CategoricalPolicy | np.ndarray, state: int, quantile: ConformalQuantile | float) -> float:
    """Identity-mapped set size; an empty set counts as all five actions."""
    q = quantile.value if isinstance(quantile, ConformalQuantile) else float(quantile)
    row = policy[state] if isinstance(policy, CategoricalPolicy) else np.asarray(policy)[state]
    return _identity_u(set_size(row, q))


def _identity_u(size: int) -> float:
    # inlined identity mapping for the per-step hot path
    return float(N_ACTIONS) if size == 0 else float(size)


def calibrate_il(policy: CategoricalPolicy, env: GridEnv, n: int = 1000, alpha: float = 0.1,
                 rng: np.random.Generator | int | None = None) -> tuple[ConformalQuantile, CalibrationSet]:
    """Roll out the imitation policy in ``env`` until ``n`` state-action pairs are scored.

    Episodes that end (goal, lava or the step cap) simply restart.
    """
    if n < 1:
        raise ValueError("need at least one calibration pair")
    rng = np.random.default_rng(rng)
    ep = Episode(env)
    scores = np.empty(n)
    for i in range(n):
        if ep.done:
            ep.reset()
        s = ep.state
        a = policy.sample(s, rng)
        scores[i] = -math.log(policy[s][a])
        ep.step(a)
    cal = CalibrationSet.from_scores(scores, capacity=n)
    return compute_quantile(cal, alpha), cal


@dataclass
class GuidanceController:
    mode: Mode
    il_quantile: float
    rl_calibrator: SlidingCalibrator
    total_steps: int
    total_episodes: int
    ibrl_temperature: float = 0.05
    weight_override: float | None = None  # pins w(s) for the AdaConG mode
    epsilon_override: float | None = None  # pins epsilon for every step

    @property
    def rl_quantile(self) -> float:
        return self.rl_calibrator.current_quantile

    def epsilon(self, t: int, e: int) -> float:
        if self.epsilon_override is not None:
            return self.epsilon_override
        return epsilon(t, e, self.total_steps, self.total_episodes)

    def relative_weight(self, u_il: float, u_rl: float) -> float:
        return weight(_SOFT, u_il, u_rl) if self.weight_override is None else self.weight_override


@dataclass(frozen=True)
class Decision:
    action: int
    source: str  # "il" or "rl"
    u_il: float
    u_rl: float


def select_action(ctrl: GuidanceController, state: int, pi_il: np.ndarray, pi_rl: np.ndarray, t: int, e: int,
                  rng: np.random.Generator, q_values: np.ndarray | None = None) -> Decision:
    """Choose between the imitation and RL candidate actions for ``state``.

    ``pi_il`` and ``pi_rl`` are full policy tables; ``q_values`` (the agent's
    Q table) is needed by the IBRL modes.
    """
    draws = rng.random(4)  # epsilon coin, a_R, a_I, arbitration coin
    row_rl, row_il = pi_rl[state], pi_il[state]
    a_rl = _inverse_cdf(row_rl, draws[1])
    a_il = _inverse_cdf(row_il, draws[2])
    u_il = policy_uncertainty(pi_il, state, ctrl.il_quantile)
    u_rl = policy_uncertainty(pi_rl, state, ctrl.rl_quantile)

    mode = ctrl.mode
    if mode is Mode.PURE_RL or draws[0] < ctrl.epsilon(t, e):
        return Decision(a_rl, "rl", u_il, u_rl)
    if mode is Mode.ADACONG:
        use_il = draws[3] < ctrl.relative_weight(u_il, u_rl)
    elif mode is Mode.HARD_ADACONG:
        use_il = weight(_HARD, u_il, u_rl) == 1.0
    else:
        if q_values is None:
            raise ValueError(f"{mode.value} needs Q values")
        q_il, q_rl = q_values[state, a_il], q_values[state, a_rl]
        if mode is Mode.IBRL:
            use_il = q_il > q_rl
        else:
            z = (q_il - q_rl) / ctrl.ibrl_temperature
            use_il = draws[3] < 1.0 / (1.0 + math.exp(-max(min(z, 700.0), -700.0)))
    return Decision(a_il, "il", u_il, u_rl) if use_il else Decision(a_rl, "rl", u_il, u_rl)


def _inverse_cdf(row: np.ndarray, u: float) -> int:
    cdf = np.cumsum(row)
    return int(min(np.searchsorted(cdf, u * cdf[-1], side="right"), len(row) - 1))


def rl_calibration_scores(pi_rl: np.ndarray, states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """``-log pi_R(a|s)`` with ``a`` drawn on-policy for each given state."""
    rows = pi_rl[states]
    actions = sample_rows(rows, rng)
    return -np.log(rows[np.arange(len(states)), actions])


def kl_guided_loss(pi_rl, pi_il, task_loss: float, w: float) -> float:
    """``L_t + w * KL(pi_R || pi_I)`` for one state (or the mean over a batch of rows)."""
    p = np.atleast_2d(np.asarray(pi_rl, dtype=float))
    q = np.atleast_2d(np.asarray(pi_il, dtype=float))
    for rows in (p, q):
        if np.any(rows < 0) or np.any(np.abs(rows.sum(axis=1) - 1.0) > 1e-6):
            raise ValueError("policy rows must be probability vectors")
    kls = np.array([kl(a, b) for a, b in zip(p, q)])
    w = np.broadcast_to(np.asarray(w, dtype=float), kls.shape)
    return float(task_loss + np.mean(w * kls))


def kl_logit_grad(pi_rl: np.ndarray, pi_il: np.ndarray) -> np.ndarray:
    """Gradient of ``KL(softmax(z) || pi_I)`` with respect to the logits ``z``, per row."""
    log_ratio = np.log(pi_rl) - np.log(pi_il)
    k = np.sum(pi_rl * log_ratio, axis=-1, keepdims=True)
    return pi_rl * (log_ratio - k)

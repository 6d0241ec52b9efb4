"""One seeded gridworld training run: demos, cloning, calibration, guided soft-Q."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from ..records import RunRecord, config_hash, stream
from ..stream import SlidingCalibrator
from .agent import ReplayBuffer, SoftQAgent
from .control import (GuidanceController, Mode, calibrate_il, kl_logit_grad, policy_uncertainty,
                      rl_calibration_scores, select_action)
from .env import Episode, GridEnv, Variant
from .policies import CategoricalPolicy, behavior_clone, generate_expert_demos

# imitation policies come from these layouts; Lava 2 has no demonstrations of its own
DEMO_SOURCE = {Variant.LAVA1: Variant.LAVA1, Variant.LAVA2: Variant.LAVA1, Variant.DOOR: Variant.DOOR}


@dataclass(frozen=True)
class GridConfig:
    env: str = "lava1"
    mode: str = "adacong"
    episodes: int = 300
    total_steps: int = 3000  # S_total of the epsilon schedule
    demo_episodes: int = 20
    bc_smoothing: float = 0.1
    lr: float = 0.1
    discount: float = 0.99
    temperature: float = 0.05
    replay_capacity: int = 10_000
    batch_size: int = 128
    alpha: float = 0.1
    cal_size: int = 1000  # N
    cal_batch: int = 128  # m
    smoothing: float = 0.1
    ibrl_temperature: float = 0.05
    guidance: str = "action"  # "action", "loss" or "both"
    kl_lr: float = 0.1
    weight_override: float | None = None
    epsilon_override: float | None = None

    def __post_init__(self):
        Variant(self.env)
        Mode(self.mode)
        if self.guidance not in ("action", "loss", "both"):
            raise ValueError("guidance must be 'action', 'loss' or 'both'")
        if self.episodes < 1 or self.total_steps < 1:
            raise ValueError("episodes and total_steps must be positive")
        if self.cal_batch > self.cal_size:
            raise ValueError("calibration batch m cannot exceed the window N")
        if self.cal_batch > self.batch_size:
            raise ValueError("calibration batch m cannot exceed the replay batch")


def imitation_policy(cfg: GridConfig, seed: int) -> CategoricalPolicy:
    demo_env = GridEnv.load(DEMO_SOURCE[Variant(cfg.env)])
    demos = generate_expert_demos(demo_env, cfg.demo_episodes, stream(seed, "grid/demos"))
    return behavior_clone(demos, demo_env.n_states, cfg.bc_smoothing)


def run_gridworld(cfg: GridConfig, seed: int) -> RunRecord:
    """Train for ``cfg.episodes`` episodes and log one row set per episode.

    Per-episode metrics: ``reward``, ``length``, ``lava``, ``goal``,
    ``il_fraction`` (share of steps that executed the IL action),
    ``u_il`` / ``u_rl`` (mean set sizes over visited states), ``epsilon`` and
    ``q_rl`` (the adaptive RL quantile at episode end).
    """
    env = GridEnv.load(cfg.env)
    mode = Mode(cfg.mode)
    pi_il_policy = imitation_policy(cfg, seed)
    pi_il = pi_il_policy.table
    q_il, cal_il = calibrate_il(pi_il_policy, env, cfg.cal_size, cfg.alpha, stream(seed, "grid/il_cal"))

    agent = SoftQAgent(env.n_states, cfg.lr, cfg.discount, cfg.temperature)
    buf = ReplayBuffer(cfg.replay_capacity)
    cal_rl = SlidingCalibrator.warm_start(cal_il, q_il.value, cfg.cal_size, cfg.cal_batch, cfg.alpha, cfg.smoothing)
    ctrl = GuidanceController(mode, q_il.value, cal_rl, cfg.total_steps, cfg.episodes,
                              cfg.ibrl_temperature, cfg.weight_override, cfg.epsilon_override)
    # with guidance="loss" the IL policy only enters through the KL term
    act_ctrl = ctrl if cfg.guidance in ("action", "both") else replace(ctrl, mode=Mode.PURE_RL)
    act_rng = stream(seed, "grid/act")
    replay_rng = stream(seed, "grid/replay")
    score_rng = stream(seed, "grid/rl_cal")
    use_loss = cfg.guidance in ("loss", "both") and mode is not Mode.PURE_RL

    rec = RunRecord(f"grid-{cfg.env}-{cfg.mode}-s{seed}", seed, config_hash(asdict(cfg)))
    rec.extras["il_quantile"] = q_il.value
    t = 0
    ep = Episode(env)
    for e in range(cfg.episodes):
        s = ep.reset()
        n_il = 0
        u_il_sum = u_rl_sum = 0.0
        eps = ctrl.epsilon(t, e)
        while not ep.done:
            d = select_action(act_ctrl, s, pi_il, agent.policy_table(), t, e, act_rng, agent.q)
            n_il += d.source == "il"
            u_il_sum += d.u_il
            u_rl_sum += d.u_rl
            s2, r, term = ep.step(d.action)
            buf.add(s, d.action, r, s2, term)
            s = s2
            t += 1

            batch = buf.sample(cfg.batch_size, replay_rng)
            agent.update(batch)
            if use_loss:
                _kl_step(agent, pi_il, batch.s, ctrl, cfg.kl_lr)
            cal_rl.update(rl_calibration_scores(agent.policy_table(), batch.s[:cfg.cal_batch], score_rng))

        n = ep.steps
        rec.log(e, "train", "reward", ep.total_reward)
        rec.log(e, "train", "length", n)
        rec.log(e, "train", "goal", float(ep.state == env.index(env.goal)))
        rec.log(e, "train", "lava", float(env.is_lava(ep.state)))
        rec.log(e, "train", "il_fraction", n_il / n)
        rec.log(e, "train", "u_il", u_il_sum / n)
        rec.log(e, "train", "u_rl", u_rl_sum / n)
        rec.log(e, "train", "epsilon", eps)
        rec.log(e, "train", "q_rl", cal_rl.current_quantile)
    rec.extras["q_table"] = agent.q
    return rec


def _kl_step(agent: SoftQAgent, pi_il: np.ndarray, states: np.ndarray, ctrl: GuidanceController, lr: float) -> None:
    """Weighted KL(pi_R || pi_I) descent on the Boltzmann logits Q / tau of the batch states."""
    states = np.unique(states)
    pi_rl = agent.policy_table()
    w = np.array([ctrl.relative_weight(policy_uncertainty(pi_il, s, ctrl.il_quantile),
                                       policy_uncertainty(pi_rl, s, ctrl.rl_quantile)) for s in states])
    grad = kl_logit_grad(pi_rl[states], pi_il[states])
    agent.q[states] -= lr * agent.temperature * w[:, None] * grad
    agent.invalidate()


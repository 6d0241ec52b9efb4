import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from adacong.conformal import quantile_index
from adacong.gridworld.control import (GuidanceController, Mode, calibrate_il, epsilon, kl_guided_loss,
                                       kl_logit_grad, policy_uncertainty, select_action, set_size)
from adacong.gridworld.env import N_ACTIONS, GridEnv
from adacong.gridworld.policies import CategoricalPolicy
from adacong.gridworld.runner import GridConfig, run_gridworld
from adacong.stream import SlidingCalibrator

TINY = """\
#####
#S..#
#..G#
#####"""


def controller(mode, q_il=math.inf, q_rl=math.inf, eps=None, w=None):
    cal = SlidingCalibrator(10, 2, 0.1, 0.1, initial_quantile=q_rl)
    return GuidanceController(mode, q_il, cal, 100, 10, weight_override=w, epsilon_override=eps)


def tables(u_il: int, u_rl: int, q: float = 1.0):
    """One-state policy tables whose prediction sets at quantile ``q`` have the given sizes."""
    def row(k):
        r = np.full(N_ACTIONS, 1e-3)
        r[:k] = 1.0
        return r / r.sum()
    return np.array([row(u_il)]), np.array([row(u_rl)])


class TestUncertainty:
    def test_example_set_of_two(self):
        pi = np.array([[0.6, 0.3, 0.05, 0.03, 0.02]])
        assert policy_uncertainty(pi, 0, 1.21) == 2.0

    def test_empty_set_counts_as_all_actions(self):
        assert set_size(np.full(5, 0.2), 0.5) == 0
        assert policy_uncertainty(np.full((1, 5), 0.2), 0, 0.5) == 5.0

    @given(st.floats(0.0, 40.0))
    def test_size_monotone_in_quantile(self, q):
        row = np.array([0.5, 0.2, 0.15, 0.1, 0.05])
        assert set_size(row, q) <= set_size(row, q + 0.3)

    def test_quantile_index_example(self):
        assert quantile_index(1000, 0.1) == 901


class TestCalibrateIL:
    def test_deterministic_policy_gives_zero(self):
        env = GridEnv.from_text(TINY)
        table = np.zeros((env.n_states, N_ACTIONS))
        table[:, 1] = 1.0
        q, cal = calibrate_il(CategoricalPolicy(table, floor=0.0), env, 200, rng=0)
        assert q.value == 0.0
        assert len(cal) == 200

    def test_uniform_policy_gives_log5(self):
        env = GridEnv.from_text(TINY)
        q, _ = calibrate_il(CategoricalPolicy.uniform(env.n_states), env, 300, rng=1)
        assert q.value == pytest.approx(math.log(5))

    def test_needs_pairs(self):
        env = GridEnv.from_text(TINY)
        with pytest.raises(ValueError):
            calibrate_il(CategoricalPolicy.uniform(env.n_states), env, 0)


class TestSchedule:
    def test_monotone_and_saturates(self):
        S, E = 1000, 50
        vals = [epsilon(t, t // 20, S, E) for t in range(0, 2001, 10)]
        assert np.all(np.diff(vals) >= 0)
        assert vals[0] == 0.0 and vals[-1] == 1.0

    def test_formula(self):
        assert epsilon(250, 10, 1000, 40) == pytest.approx(0.125 + 0.125)

    def test_bad_totals(self):
        with pytest.raises(ValueError):
            epsilon(0, 0, 0, 10)


class TestSelectAction:
    def test_epsilon_one_always_rl(self, rng):
        pi_il, pi_rl = tables(1, 5)
        pi_il = np.eye(N_ACTIONS)[[0]] * 0.99 + 0.002
        pi_rl = np.eye(N_ACTIONS)[[3]] * 0.99 + 0.002
        for mode in Mode:
            ctrl = controller(mode, 1.0, 1.0, eps=1.0)
            for _ in range(200):
                d = select_action(ctrl, 0, pi_il, pi_rl, 0, 0, rng, np.zeros((1, N_ACTIONS)))
                assert d.source == "rl"

    def test_hard_prefers_certain_il(self, rng):
        pi_il, pi_rl = tables(1, 5)
        ctrl = controller(Mode.HARD_ADACONG, 1.0, 1.0, eps=0.0)
        d = select_action(ctrl, 0, pi_il, pi_rl, 0, 0, rng)
        assert (d.u_il, d.u_rl) == (1.0, 5.0)
        assert all(select_action(ctrl, 0, pi_il, pi_rl, 0, 0, rng).source == "il" for _ in range(100))

    def test_hard_tie_goes_to_rl(self, rng):
        pi_il, pi_rl = tables(2, 2)
        ctrl = controller(Mode.HARD_ADACONG, 1.0, 1.0, eps=0.0)
        assert all(select_action(ctrl, 0, pi_il, pi_rl, 0, 0, rng).source == "rl" for _ in range(100))

    def test_soft_equal_uncertainty_is_fair_coin(self, rng):
        pi_il, pi_rl = tables(3, 3)
        ctrl = controller(Mode.ADACONG, 1.0, 1.0, eps=0.0)
        freq = np.mean([select_action(ctrl, 0, pi_il, pi_rl, 0, 0, rng).source == "il" for _ in range(10_000)])
        assert abs(freq - 0.5) <= 0.03

    def test_weight_override(self, rng):
        pi_il, pi_rl = tables(1, 5)
        ctrl = controller(Mode.ADACONG, 1.0, 1.0, eps=0.0, w=0.0)
        assert all(select_action(ctrl, 0, pi_il, pi_rl, 0, 0, rng).source == "rl" for _ in range(100))

    def test_ibrl_picks_higher_q(self, rng):
        pi_il = np.eye(N_ACTIONS)[[0]] * 0.99 + 0.002
        pi_rl = np.eye(N_ACTIONS)[[3]] * 0.99 + 0.002
        q = np.zeros((1, N_ACTIONS))
        q[0, 0] = 1.0
        ctrl = controller(Mode.IBRL, 1.0, 1.0, eps=0.0)
        picks = [select_action(ctrl, 0, pi_il, pi_rl, 0, 0, rng, q) for _ in range(50)]
        assert all(d.source == "il" for d in picks if d.action == 0)
        with pytest.raises(ValueError):
            select_action(ctrl, 0, pi_il, pi_rl, 0, 0, rng)

    def test_draw_count_shared_across_modes(self):
        pi_il, pi_rl = tables(1, 5)
        tails = []
        for mode in Mode:
            rng = np.random.default_rng(3)
            select_action(controller(mode, 1.0, 1.0, eps=0.5), 0, pi_il, pi_rl, 0, 0, rng, np.zeros((1, 5)))
            tails.append(rng.random())
        assert len(set(tails)) == 1


class TestKL:
    def test_guided_loss(self):
        p = np.array([0.5, 0.5, 0, 0, 0])
        assert kl_guided_loss(p, np.full(5, 0.2), 1.0, 0.5) == pytest.approx(1.0 + 0.5 * math.log(2.5))
        with pytest.raises(ValueError):
            kl_guided_loss([0.7, 0.7, 0, 0, 0], np.full(5, 0.2), 0.0, 1.0)

    def test_logit_grad_matches_numeric(self, rng):
        z = rng.normal(size=N_ACTIONS)
        target = rng.dirichlet(np.ones(N_ACTIONS))

        def f(z):
            p = np.exp(z - z.max())
            p /= p.sum()
            return float(np.sum(p * (np.log(p) - np.log(target))))

        p = np.exp(z - z.max())
        p /= p.sum()
        num = np.array([(f(z + h) - f(z - h)) / 2e-6 for h in np.eye(N_ACTIONS) * 1e-6])
        assert np.allclose(kl_logit_grad(p, target), num, atol=1e-6)


class TestRunner:
    def test_logs_every_episode(self):
        rec = run_gridworld(GridConfig(episodes=5, total_steps=200, cal_size=100, cal_batch=16), 0)
        _, r = rec.series("reward", "train")
        assert r.size == 5
        _, frac = rec.series("il_fraction", "train")
        assert np.all((0 <= frac) & (frac <= 1))

    def test_deterministic(self):
        cfg = GridConfig(env="door", mode="soft_ibrl", episodes=4, total_steps=200, cal_size=100, cal_batch=16)
        a, b = run_gridworld(cfg, 5), run_gridworld(cfg, 5)
        assert a.rows == b.rows

    def test_loss_guidance_runs(self):
        cfg = GridConfig(episodes=3, total_steps=100, cal_size=100, cal_batch=16, guidance="both")
        assert len(run_gridworld(cfg, 1).rows) > 0

    @pytest.mark.parametrize("bad", [dict(env="maze"), dict(mode="greedy"), dict(guidance="none"),
                                     dict(cal_batch=2000)])
    def test_rejects(self, bad):
        with pytest.raises(ValueError):
            GridConfig(**bad)

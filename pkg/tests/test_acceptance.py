"""Acceptance suite: one printed PASS/FAIL line per criterion.

Tolerances and runtime budgets are pinned; run with ``pytest tests/test_acceptance.py -v``.
"""

import math
import time
from collections import deque

import numpy as np
import pytest

from adacong.conformal import compute_quantile, empirical_coverage, quantile_index
from adacong.gridworld.runner import GridConfig, run_gridworld
from adacong.pipelines.kd import KDConfig, run_kd_baselines
from adacong.pipelines.ssl import SSLConfig, run_ssl
from adacong.stream import SlidingCalibrator
from oracles import LOSS_COMBOS, gradient_check, quantile_oracle
from adacong.tinylearn import Activation

pytestmark = pytest.mark.slow

KD_SEEDS = SSL_SEEDS = (1, 2, 3, 4, 5)
GRID_SEEDS = tuple(range(10))
GRID_ENVS = ("lava1", "lava2", "door")
GRID_MODES = ("adacong", "hard_adacong", "ibrl", "soft_ibrl", "pure_rl")


@pytest.fixture
def report(capsys):
    def _report(name: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        assert ok, f"{name}: {detail}"
    return _report


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0


def test_coverage_guarantee(report):
    with Timer() as t:
        details, ok = [], True
        for alpha in (0.05, 0.1):
            covs = []
            for seed in range(50):
                rng = np.random.default_rng(seed)
                q = compute_quantile(rng.random(1000), alpha)
                covs.append(empirical_coverage(q, rng.random(1000)))
            m = float(np.mean(covs))
            ok &= 1 - alpha - 0.02 <= m <= 1 - alpha + 0.02
            details.append(f"alpha={alpha} mean={m:.4f}")
    report("coverage guarantee", ok and t.elapsed < 10, f"{', '.join(details)}; {t.elapsed:.1f}s (< 10s)")


def test_quantile_oracle_equivalence(report):
    rng = np.random.default_rng(11)
    with Timer() as t:
        mismatches = 0
        for _ in range(1000):
            n = int(rng.integers(1, 201))
            scores = rng.random(n) if rng.random() < 0.5 else rng.integers(0, 5, n).astype(float)  # ties too
            alpha = float(rng.choice([0.01, 0.05, 0.1, 0.25, 0.5]))
            mismatches += compute_quantile(scores, alpha).value != quantile_oracle(scores, alpha)
    report("quantile oracle equivalence", mismatches == 0 and t.elapsed < 5,
           f"{mismatches} mismatches in 1000; {t.elapsed:.2f}s (< 5s)")


def test_gradient_correctness(report):
    with Timer() as t:
        worst = 0.0
        for i in range(20):
            rng = np.random.default_rng(1000 + i)
            act = (Activation.TANH, Activation.RELU)[i % 2]
            for combo in LOSS_COMBOS:
                worst = max(worst, gradient_check(rng, combo, act))
    report("gradient correctness", worst < 1e-4 and t.elapsed < 30,
           f"max relative error {worst:.2e} (< 1e-4) over 20 nets x {len(LOSS_COMBOS)} losses; {t.elapsed:.1f}s (< 30s)")


@pytest.fixture(scope="module")
def kd_results():
    t0 = time.perf_counter()
    out = {}
    for condition in ("noisy", "control"):
        acc: dict[str, list[float]] = {}
        teacher = []
        for seed in KD_SEEDS:
            recs = run_kd_baselines(KDConfig(condition=condition), seed)
            teacher.append(recs["kd"].final("teacher_accuracy"))
            for b, rec in recs.items():
                acc.setdefault(b, []).append(rec.final("accuracy", "test"))
        out[condition] = ({b: float(np.median(v)) for b, v in acc.items()}, float(np.median(teacher)))
    return out, time.perf_counter() - t0


def test_kd_directional(report, kd_results):
    res, elapsed = kd_results
    med, teacher = res["noisy"]
    ada, scratch, kd = med["adacong"], med["scratch"], med["kd"]
    checks = {
        "teacher <= scratch - 5pt": teacher <= scratch - 0.05,
        "adacong >= scratch + 1pt": ada >= scratch + 0.01,
        "adacong >= kd + 2pt": ada >= kd + 0.02,
        "kd <= scratch": kd <= scratch,
        "runtime < 5 min": elapsed < 300,
    }
    failed = [k for k, v in checks.items() if not v]
    report("KD directional reproduction", not failed,
           f"median teacher={teacher:.4f} scratch={scratch:.4f} kd={kd:.4f} adacong={ada:.4f}; "
           f"{elapsed:.0f}s for both conditions" + (f"; failed: {', '.join(failed)}" if failed else ""))


def test_kd_control(report, kd_results):
    res, _ = kd_results
    med, _ = res["control"]
    gap = abs(med["adacong"] - med["kd"])
    report("KD control condition", gap <= 0.01,
           f"|adacong - kd| = {gap * 100:.2f} points (<= 1), adacong={med['adacong']:.4f} kd={med['kd']:.4f}")


def test_ssl_directional(report):
    with Timer() as t:
        lines, ok = [], True
        for guide in ("ce", "mse"):
            wins = 0
            for seed in SSL_SEEDS:
                a = run_ssl(SSLConfig(weighted=True, guide=guide), seed).final("accuracy", "test")
                b = run_ssl(SSLConfig(weighted=False, guide=guide), seed).final("accuracy", "test")
                wins += a > b
            ok &= wins >= 4
            lines.append(f"{guide}: {wins}/5 wins")
    report("SSL directional reproduction", ok and t.elapsed < 300,
           f"{', '.join(lines)} (need >= 4 each); {t.elapsed:.0f}s (< 300s)")


@pytest.fixture(scope="module")
def grid_results():
    t0 = time.perf_counter()
    final, u = {}, {}
    for env in GRID_ENVS:
        for mode in GRID_MODES:
            for seed in GRID_SEEDS:
                rec = run_gridworld(GridConfig(env=env, mode=mode), seed)
                final.setdefault((env, mode), []).append(float(rec.series("reward", "train")[1][-100:].mean()))
                if env == "lava1" and mode == "adacong":
                    u.setdefault("u_rl", []).append(rec.series("u_rl", "train")[1])
                    u.setdefault("u_il", []).append(rec.series("u_il", "train")[1])
    med = {k: float(np.median(v)) for k, v in final.items()}
    return med, u, time.perf_counter() - t0


def test_gridworld_ordering(report, grid_results):
    med, _, elapsed = grid_results
    failed, rows = [], []
    for env in GRID_ENVS:
        ada, hard = med[env, "adacong"], med[env, "hard_adacong"]
        for rival in ("ibrl", "soft_ibrl", "pure_rl"):
            if ada < med[env, rival]:
                failed.append(f"{env}: adacong < {rival}")
        if abs(ada - hard) > 0.1 * max(abs(ada), abs(hard)):
            failed.append(f"{env}: adacong vs hard_adacong differ by more than 10%")
        rows.append(f"{env} " + " ".join(f"{m}={med[env, m]:.2f}" for m in GRID_MODES))
    if elapsed >= 600:
        failed.append("runtime >= 10 min")
    report("gridworld ordering", not failed,
           "; ".join(rows) + f"; {elapsed:.0f}s (< 600s)" + (f"; failed: {', '.join(failed)}" if failed else ""))


def test_lava2_gap(report, grid_results):
    med, _, _ = grid_results
    best = max(med["lava2", "ibrl"], med["lava2", "soft_ibrl"])
    ada = med["lava2", "adacong"]
    ratio = ada / best if best > 0 else math.inf
    # with a non-positive rival, 2x is met whenever adacong itself is positive
    ok = ada >= 2 * best if best > 0 else ada > 0
    report("Lava 2 gap", ok, f"adacong={ada:.2f} best IBRL variant={best:.2f} ratio={ratio:.2f} (>= 2)")


def test_uncertainty_convergence(report, grid_results):
    _, u, _ = grid_results
    u_rl = np.median(np.array(u["u_rl"]), axis=0)
    u_il = np.median(np.array(u["u_il"]), axis=0)
    first, last, il = u_rl[:100].mean(), u_rl[-100:].mean(), u_il[-100:].mean()
    ok = abs(last - il) <= 1.0 and last < first
    report("uncertainty convergence", ok,
           f"u_R first100={first:.2f} last100={last:.2f} u_I={il:.2f} |diff|={abs(last - il):.2f} (<= 1)")


def test_streaming(report):
    with Timer() as t:
        finals = []
        for s in range(20):
            r = np.random.default_rng(s)
            cal = SlidingCalibrator.warm_start(r.random(1000), 0.5, capacity=1000, batch_size=128, alpha=0.1,
                                               smoothing=0.1)
            for _ in range(200):
                cal.update(r.random(128))
            finals.append(cal.current_quantile)
        converged = abs(float(np.median(finals)) - 0.9) <= 0.03
        window_ok = True
        r = np.random.default_rng(99)
        for _ in range(50):
            cap = int(r.integers(3, 40))
            cal, ref = SlidingCalibrator(cap, 3, alpha=0.2, smoothing=0.3), deque(maxlen=cap)
            for _ in range(int(r.integers(1, 30))):
                b = r.normal(size=3)
                cal.update(b)
                ref.extend(b)
                window_ok &= cal.window == tuple(ref)
                # below the finite-sample size the window falls back to its maximum
                expect = max(ref) if quantile_index(len(ref), 0.2) > len(ref) else \
                    compute_quantile(np.array(ref), 0.2).value
                window_ok &= cal.raw_quantile == expect
    report("EMA/streaming", converged and window_ok and t.elapsed < 10,
           f"median final quantile {np.median(finals):.4f} (0.9 +- 0.03), window oracle "
           f"{'ok' if window_ok else 'MISMATCH'}; {t.elapsed:.1f}s (< 10s)")


def test_reductions(report):
    small_kd = dict(n_source=1000, n_test=500, teacher_epochs=10, epochs=5)
    from adacong.pipelines.kd import prepare, run_kd
    sh = prepare(KDConfig(**small_kd), 3)
    w1 = run_kd(KDConfig(baseline="adacong", weight_override=1.0, **small_kd), 3, sh).rows == \
        run_kd(KDConfig(baseline="kd", **small_kd), 3, sh).rows
    # the logged mean_weight still describes the (unused) guide weights, so compare everything else
    a = run_kd(KDConfig(baseline="adacong", lambda_guide=0.0, **small_kd), 3, sh)
    b = run_kd(KDConfig(baseline="scratch", **small_kd), 3, sh)
    lam0 = [r for r in a.rows if r[2] != "mean_weight"] == [r for r in b.rows if r[2] != "mean_weight"] and all(
        np.array_equal(p, q) for la, lb in zip(a.extras["student"].layers, b.extras["student"].layers)
        for p, q in zip(la, lb))
    small_ssl = dict(iterations=100, n_unlabeled=500)
    ssl1 = run_ssl(SSLConfig(weighted=True, weight_override=1.0, **small_ssl), 3).rows == \
        run_ssl(SSLConfig(weighted=False, **small_ssl), 3).rows
    eps1 = all(
        run_gridworld(GridConfig(env=env, mode="adacong", episodes=30, epsilon_override=1.0), 3).rows ==
        run_gridworld(GridConfig(env=env, mode="pure_rl", episodes=30, epsilon_override=1.0), 3).rows
        for env in GRID_ENVS)
    checks = {"KD w=1 == kd": w1, "KD lambda_guide=0 == scratch": lam0, "SSL w=1 == unweighted": ssl1,
              "eps=1 adacong == pure_rl": eps1}
    report("reductions", all(checks.values()), ", ".join(f"{k}: {'ok' if v else 'DIFFERS'}" for k, v in checks.items()))

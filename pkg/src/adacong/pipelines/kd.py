"""Knowledge distillation from a teacher that degrades under domain shift.

The teacher is trained on clean source data and sees ``n_teacher_only``
precise features the student never gets (a richer-sensor teacher guiding a
reduced-input student). Those features classify almost perfectly when clean
and become garbage under the additive shift, so the teacher is excellent on
clean target points and misleading on shifted ones. Conformal set sizes tell
the two apart; the student's guidance term is weighted accordingly.

Baselines: ``scratch`` (no guidance), ``kd`` (w = 1), ``adacong``
(conformal weights), ``entropy`` / ``msp`` (heuristic uncertainty through
the same exponential decay) and ``hard`` (w = 1 only for singleton sets).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..conformal import NonconformityRule, compute_quantile, label_scores, set_sizes, true_label_scores
from ..records import RunRecord, config_hash, stream
from ..tinylearn import Activation, DenseNet, GuideKind, LossSpec, backward, sgd_step, train_classifier
from ..weighting import (HeuristicKind, MappingKind, UncertaintyMapping, WeightKind, WeightRule,
                         heuristic_uncertainty, uncertainty, weight)
from .data import Dataset, ShiftSpec, SplitPlan, SyntheticTask, apply_shift, generate_task

KD_BASELINES = ("scratch", "kd", "adacong", "entropy", "msp", "hard")


@dataclass(frozen=True)
class KDConfig:
    baseline: str = "adacong"
    condition: str = "noisy"  # "noisy" teacher, or "control": clean teacher matched to the student
    K: int = 10
    dim: int = 32
    n_teacher_only: int = 8
    separation: float = 1.0
    sigma: float = 1.25
    precise_separation: float = 0.3
    precise_sigma: float = 0.05
    n_source: int = 5000
    n_pool: int = 200
    n_test: int = 4000
    noise_sigma: float = 1.25
    noise_fraction: float = 0.4
    teacher_hidden: int = 16
    teacher_epochs: int = 40
    teacher_lr: float = 0.1
    student_hidden: int = 0
    epochs: int = 60
    lr: float = 0.05
    batch_size: int = 64
    weight_decay: float = 5e-4
    alpha: float = 0.1
    gamma: float = 10.0
    temperature: float = 4.0
    lambda_task: float = 1.0
    lambda_guide: float = 1.0
    weight_override: float | None = None  # force every guide weight to this value

    def __post_init__(self):
        if self.baseline not in KD_BASELINES:
            raise ValueError(f"unknown baseline '{self.baseline}'; choose from {KD_BASELINES}")
        if self.condition not in ("noisy", "control"):
            raise ValueError("condition must be 'noisy' or 'control'")
        if not 0 <= self.n_teacher_only < self.dim:
            raise ValueError("n_teacher_only must leave the student at least one feature")
        if self.weight_override is not None and not 0.0 <= self.weight_override <= 1.0:
            raise ValueError("weight_override must lie in [0, 1]")

    @property
    def student_dim(self) -> int:
        return self.dim - self.n_teacher_only


class Teacher:
    """Frozen network plus the input view and standardisation it was trained with."""

    def __init__(self, net: DenseNet, n_features: int, mean=None, std=None):
        self.net = net
        self.n_features = n_features
        self.mean = mean
        self.std = std

    def _view(self, x):
        x = np.asarray(x, dtype=float)[:, :self.n_features]
        if self.mean is not None:
            x = (x - self.mean) / self.std
        return x

    def logits(self, x) -> np.ndarray:
        return self.net.forward(self._view(x))

    def proba(self, x) -> np.ndarray:
        return self.net.predict_proba(self._view(x))

    def accuracy(self, data: Dataset) -> float:
        return float(np.mean(self.logits(data.x).argmax(axis=1) == data.y))


def _task(cfg: KDConfig, seed: int) -> SyntheticTask:
    return SyntheticTask.with_precise_features(cfg.K, cfg.dim, cfg.n_teacher_only, cfg.separation, cfg.sigma,
                                               cfg.precise_separation, cfg.precise_sigma, seed=seed)


def _init_student(cfg: KDConfig, rng) -> DenseNet:
    dims = [cfg.student_dim] + ([cfg.student_hidden] if cfg.student_hidden else []) + [cfg.K]
    return DenseNet.initialize(dims, Activation.RELU, rng=rng)


def prepare(cfg: KDConfig, seed: int) -> dict:
    """Build everything the baselines share: data, split and frozen teacher.

    Depends only on ``seed`` and the data/teacher fields of ``cfg``, so every
    baseline of one seed sees the same teacher and the same samples.
    """
    task = _task(cfg, seed)
    shift_on = cfg.condition == "noisy"
    pool = generate_task(task, cfg.n_pool, stream(seed, "kd/pool"))
    test = generate_task(task, cfg.n_test, stream(seed, "kd/test"))
    if shift_on:
        pool = apply_shift(pool, ShiftSpec(cfg.noise_sigma, cfg.noise_fraction, seed))
        test = apply_shift(test, ShiftSpec(cfg.noise_sigma, cfg.noise_fraction, seed + 1_000_003))
    train_idx, cal_idx = SplitPlan().split(cfg.n_pool, stream(seed, "kd/split"))

    t_rng = stream(seed, "kd/teacher")
    if shift_on:
        src = generate_task(task, cfg.n_source, stream(seed, "kd/source"))
        mean, std = src.x.mean(axis=0), src.x.std(axis=0)
        net = DenseNet.initialize([cfg.dim, cfg.teacher_hidden, cfg.K], Activation.TANH, rng=t_rng)
        train_classifier(net, (src.x - mean) / std, src.y, cfg.teacher_epochs, cfg.teacher_lr, rng=t_rng)
        teacher = Teacher(net, cfg.dim, mean, std)
    else:
        # matched control: the student's own architecture, input view and clean training data
        net = _init_student(cfg, t_rng)
        tr = pool.subset(train_idx)
        train_classifier(net, tr.x[:, :cfg.student_dim], tr.y, cfg.epochs, cfg.lr, cfg.batch_size,
                         cfg.weight_decay, rng=t_rng)
        teacher = Teacher(net, cfg.student_dim)
    return {"pool": pool, "test": test, "train_idx": train_idx, "cal_idx": cal_idx, "teacher": teacher}


def check_disjoint(train_idx, cal_idx) -> None:
    overlap = np.intersect1d(np.asarray(train_idx), np.asarray(cal_idx))
    if overlap.size:
        raise ValueError(f"calibration and training sets overlap on {overlap.size} samples "
                         f"(first indices {overlap[:5].tolist()})")


def guide_weights(cfg: KDConfig, teacher: Teacher, train: Dataset, cal: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample guide weights and teacher prediction-set sizes on the training split."""
    probs = teacher.proba(train.x)
    q = compute_quantile(true_label_scores(NonconformityRule.CONFIDENCE, teacher.proba(cal.x), cal.y), cfg.alpha)
    sizes = set_sizes(label_scores(NonconformityRule.CONFIDENCE, probs), q)
    u = uncertainty(UncertaintyMapping(MappingKind.NORMALIZED_SET_SIZE, cfg.K), sizes)
    b = cfg.baseline
    if b in ("scratch", "kd"):
        w = np.ones(len(train))
    elif b == "adacong":
        w = weight(WeightRule.exp_decay(cfg.gamma), u)
    elif b == "hard":
        w = weight(WeightRule(WeightKind.HARD_ZERO), u)
    else:
        kind = HeuristicKind.ENTROPY if b == "entropy" else HeuristicKind.MSP
        w = weight(WeightRule.exp_decay(cfg.gamma), heuristic_uncertainty(kind, probs))
    w = np.atleast_1d(np.asarray(w, dtype=float))
    if cfg.weight_override is not None:
        w = np.full(len(train), float(cfg.weight_override))
    return w, sizes


def run_kd(cfg: KDConfig, seed: int, shared: dict | None = None, split=None) -> RunRecord:
    """Train one student and return its per-epoch record.

    Args:
        shared: output of :func:`prepare` for this seed, to reuse a teacher.
        split: optional ``(train_idx, cal_idx)`` overriding the seeded split.

    Raises:
        ValueError: if the calibration and training indices overlap.
    """
    shared = shared if shared is not None else prepare(cfg, seed)
    train_idx, cal_idx = split if split is not None else (shared["train_idx"], shared["cal_idx"])
    check_disjoint(train_idx, cal_idx)
    pool, test, teacher = shared["pool"], shared["test"], shared["teacher"]
    train, cal = pool.subset(train_idx), pool.subset(cal_idx)

    rec = RunRecord(f"kd-{cfg.baseline}-s{seed}", seed, config_hash(asdict(cfg)))
    rec.extras.update(train_idx=np.asarray(train_idx).tolist(), cal_idx=np.asarray(cal_idx).tolist())
    w, sizes = guide_weights(cfg, teacher, train, cal)
    guided = cfg.baseline != "scratch"
    spec = LossSpec(GuideKind.KL if guided else None, cfg.temperature, cfg.lambda_task,
                    cfg.lambda_guide if guided else 0.0)
    t_logits = teacher.logits(train.x)
    xs, xt = train.x[:, :cfg.student_dim], test.x[:, :cfg.student_dim]

    rec.log(0, "test", "teacher_accuracy", teacher.accuracy(test))
    rng = stream(seed, "kd/student")
    net = _init_student(cfg, rng)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            g = backward(net, xs[idx], train.y[idx], spec,
                         t_logits[idx] if spec.uses_guide else None, w[idx])
            sgd_step(net, g, cfg.lr, cfg.weight_decay)
        rec.log(epoch, "train", "accuracy", net.accuracy(xs, train.y))
        rec.log(epoch, "test", "accuracy", net.accuracy(xt, test.y))
        rec.log(epoch, "train", "mean_set_size", sizes.mean())
        rec.log(epoch, "train", "mean_weight", w.mean())
    shifted = test.shifted
    pred = net.forward(xt).argmax(axis=1)
    if shifted.any() and (~shifted).any():
        rec.log(cfg.epochs, "test_clean", "accuracy", np.mean(pred[~shifted] == test.y[~shifted]))
        rec.log(cfg.epochs, "test_shifted", "accuracy", np.mean(pred[shifted] == test.y[shifted]))
    rec.extras["student"] = net
    return rec


def run_kd_baselines(cfg: KDConfig, seed: int, baselines=KD_BASELINES) -> dict[str, RunRecord]:
    """All requested baselines for one seed, sharing data and teacher."""
    shared = prepare(cfg, seed)
    out = {}
    for b in baselines:
        out[b] = run_kd(_with(cfg, baseline=b), seed, shared)
    return out


def _with(cfg: KDConfig, **changes) -> KDConfig:
    d = asdict(cfg)
    d.update(changes)
    return KDConfig(**d)

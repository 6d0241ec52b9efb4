"""FixMatch-style semi-supervised training with conformal pseudo-label weights.

Each iteration takes a labelled batch and an unlabelled batch. The model's
prediction on a weak view yields a pseudo-label where its confidence clears
``threshold``; the strong view is then trained towards it. With AdaConG the
surviving pseudo-labels are further weighted by ``exp(-gamma * u)``, where
``u`` comes from the prediction-set size calibrated on the labelled data
under the same weak augmentation. The quantile is refreshed every
``recalibrate_every`` iterations from the current model.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..conformal import NonconformityRule, compute_quantile, label_scores, set_sizes, true_label_scores
from ..records import RunRecord, config_hash, stream
from ..tinylearn import Activation, DenseNet, GuideKind, LossSpec, add_grads, backward, sgd_step, softmax
from ..weighting import MappingKind, UncertaintyMapping, WeightRule, uncertainty, weight
from .data import AugmentConfig, Dataset, Strength, SyntheticTask, augment, generate_task

SSL_GUIDES = {"ce": GuideKind.CE_HARD, "mse": GuideKind.MSE_LOGITS}


@dataclass(frozen=True)
class SSLConfig:
    weighted: bool = True  # False gives the unweighted FixMatch-style baseline
    guide: str = "ce"  # "ce" on pseudo-labels or "mse" on weak-view logits
    K: int = 10
    dim: int = 32
    separation: float = 1.0
    sigma: float = 2.0
    labeled_per_class: int = 4
    n_unlabeled: int = 2000
    n_test: int = 2000
    hidden: int = 128
    iterations: int = 1000
    unlabeled_batch: int = 128
    lr: float = 0.05
    weight_decay: float = 5e-4
    threshold: float = 0.95
    use_threshold: bool = True
    alpha: float = 0.05
    gamma: float = 8.0
    lambda_u: float = 1.0
    recalibrate_every: int = 50
    weak_sigma: float = 0.05
    strong_sigma: float = 0.3
    strong_dropout: float = 0.2
    weight_override: float | None = None

    def __post_init__(self):
        if self.guide not in SSL_GUIDES:
            raise ValueError(f"guide must be one of {sorted(SSL_GUIDES)}")
        if self.labeled_per_class < 1:
            raise ValueError("labelled set is empty")
        if not 0.0 < self.threshold <= 1.0:
            raise ValueError("threshold must lie in (0, 1]")
        if self.recalibrate_every < 1 or self.iterations < 1:
            raise ValueError("iterations and recalibration cadence must be positive")
        if self.weight_override is not None and not 0.0 <= self.weight_override <= 1.0:
            raise ValueError("weight_override must lie in [0, 1]")

    @property
    def augment_config(self) -> AugmentConfig:
        return AugmentConfig(self.weak_sigma, self.strong_sigma, self.strong_dropout)


@dataclass
class PseudoLabelBatch:
    weak: np.ndarray
    strong: np.ndarray
    pseudo: np.ndarray  # -1 where no pseudo-label survives
    confidence: np.ndarray
    set_size: np.ndarray
    weight: np.ndarray  # zero wherever pseudo == -1

    @property
    def mask(self) -> np.ndarray:
        return self.pseudo >= 0


def make_data(cfg: SSLConfig, seed: int) -> tuple[Dataset, Dataset, Dataset]:
    task = SyntheticTask.gaussian_mixture(cfg.K, cfg.dim, cfg.separation, cfg.sigma, seed=seed)
    labeled = generate_task(task, cfg.K * cfg.labeled_per_class, stream(seed, "ssl/labeled"))
    unlabeled = generate_task(task, cfg.n_unlabeled, stream(seed, "ssl/unlabeled"))
    test = generate_task(task, cfg.n_test, stream(seed, "ssl/test"))
    return labeled, unlabeled, test


def calibrate(net: DenseNet, labeled: Dataset, cfg: SSLConfig, rng):
    """Conformal quantile of the current model on a fresh weak view of the labelled set."""
    weak = augment(labeled.x, Strength.WEAK, rng, cfg.augment_config)
    scores = true_label_scores(NonconformityRule.CONFIDENCE, net.predict_proba(weak), labeled.y)
    return compute_quantile(scores, cfg.alpha)


def pseudo_label(net: DenseNet, x: np.ndarray, quantile, cfg: SSLConfig, rng) -> PseudoLabelBatch:
    weak = augment(x, Strength.WEAK, rng, cfg.augment_config)
    strong = augment(x, Strength.STRONG, rng, cfg.augment_config)
    probs = softmax(net.forward(weak))
    conf = probs.max(axis=1)
    keep = conf >= cfg.threshold if cfg.use_threshold else np.ones(len(x), dtype=bool)
    pseudo = np.where(keep, probs.argmax(axis=1), -1)
    sizes = set_sizes(label_scores(NonconformityRule.CONFIDENCE, probs), quantile)
    if cfg.weight_override is not None:
        w = np.full(len(x), float(cfg.weight_override))
    elif cfg.weighted:
        u = uncertainty(UncertaintyMapping(MappingKind.NORMALIZED_SET_SIZE, cfg.K), sizes)
        w = np.atleast_1d(weight(WeightRule.exp_decay(cfg.gamma), u))
    else:
        w = np.ones(len(x))
    return PseudoLabelBatch(weak, strong, pseudo, conf, sizes, np.where(keep, w, 0.0))


def run_ssl(cfg: SSLConfig, seed: int) -> RunRecord:
    """Train from a handful of labels plus an unlabelled pool.

    Raises:
        ValueError: if the labelled set is empty.
    """
    labeled, unlabeled, test = make_data(cfg, seed)
    if len(labeled) == 0:
        raise ValueError("labelled set is empty")
    rec = RunRecord(f"ssl-{cfg.guide}-{'adacong' if cfg.weighted else 'unweighted'}-s{seed}",
                    seed, config_hash(asdict(cfg)))
    dims = [cfg.dim] + ([cfg.hidden] if cfg.hidden else []) + [cfg.K]
    net = DenseNet.initialize(dims, Activation.RELU, rng=stream(seed, "ssl/init"))
    batch_rng = stream(seed, "ssl/batches")
    aug_rng = stream(seed, "ssl/augment")
    cal_rng = stream(seed, "ssl/calibration")
    sup = LossSpec()
    guide = SSL_GUIDES[cfg.guide]
    unsup = LossSpec(guide, lambda_task=0.0, lambda_guide=cfg.lambda_u)

    quantile = None
    stats = {"mask": [], "precision": [], "weight": []}
    for it in range(1, cfg.iterations + 1):
        if quantile is None or (it - 1) % cfg.recalibrate_every == 0:
            quantile = calibrate(net, labeled, cfg, cal_rng)
        xl = augment(labeled.x, Strength.WEAK, aug_rng, cfg.augment_config)
        grads = backward(net, xl, labeled.y, sup)

        idx = batch_rng.choice(len(unlabeled), size=cfg.unlabeled_batch, replace=False)
        batch = pseudo_label(net, unlabeled.x[idx], quantile, cfg, aug_rng)
        m = batch.mask
        if m.any():
            target = batch.pseudo if guide is GuideKind.CE_HARD else net.forward(batch.weak)
            # mean over the whole unlabelled batch, as in FixMatch: rescale the masked mean
            g_u = backward(net, batch.strong[m], None, unsup, target[m], batch.weight[m])
            grads = add_grads(grads, g_u, m.sum() / cfg.unlabeled_batch)
            stats["precision"].append(np.mean(batch.pseudo[m] == unlabeled.y[idx][m]))
            stats["weight"].append(batch.weight[m].mean())
        stats["mask"].append(m.mean())
        sgd_step(net, grads, cfg.lr, cfg.weight_decay)

        if it % cfg.recalibrate_every == 0 or it == cfg.iterations:
            rec.log(it, "test", "accuracy", net.accuracy(test.x, test.y))
            rec.log(it, "train", "mask_rate", np.mean(stats["mask"]))
            rec.log(it, "train", "pseudo_label_precision",
                    np.mean(stats["precision"]) if stats["precision"] else float("nan"))
            rec.log(it, "train", "mean_weight", np.mean(stats["weight"]) if stats["weight"] else float("nan"))
            rec.log(it, "train", "quantile", quantile.value)
            stats = {k: [] for k in stats}
    rec.extras["model"] = net
    return rec

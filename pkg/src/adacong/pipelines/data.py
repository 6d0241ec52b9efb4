"""Synthetic Gaussian-mixture tasks, domain shift, splits and augmentation."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np


@dataclass(frozen=True)
class SyntheticTask:
    """Gaussian mixture with one mean per class.

    ``within_class_sigma`` is a scalar or a per-feature vector; per-feature
    scales let some features be far more reliable than others on clean data.
    """

    class_means: np.ndarray
    within_class_sigma: float | np.ndarray
    seed: int = 0

    @property
    def K(self) -> int:
        return self.class_means.shape[0]

    @property
    def dim(self) -> int:
        return self.class_means.shape[1]

    @classmethod
    def gaussian_mixture(cls, K: int = 10, dim: int = 32, separation: float = 1.0,
                         sigma: float = 1.0, seed: int = 0) -> "SyntheticTask":
        rng = np.random.default_rng([seed, 0x7A5C])
        means = rng.normal(0.0, separation, size=(K, dim))
        return cls(means, float(sigma), seed)

    @classmethod
    def with_precise_features(cls, K: int = 10, dim: int = 32, n_precise: int = 8,
                              separation: float = 1.0, sigma: float = 1.0,
                              precise_separation: float = 0.1, precise_sigma: float = 0.02,
                              seed: int = 0) -> "SyntheticTask":
        """Mixture whose last ``n_precise`` features separate classes with tiny spread.

        On clean data those features alone classify almost perfectly; a small
        amount of additive noise wipes them out while the broad features survive.
        """
        if not 0 <= n_precise < dim:
            raise ValueError("n_precise must leave at least one broad feature")
        rng = np.random.default_rng([seed, 0x7A5C])
        broad = rng.normal(0.0, separation, size=(K, dim - n_precise))
        precise = rng.normal(0.0, precise_separation, size=(K, n_precise))
        sig = np.concatenate([np.full(dim - n_precise, sigma), np.full(n_precise, precise_sigma)])
        return cls(np.hstack([broad, precise]), sig, seed)

    def nearest_mean(self, x: np.ndarray) -> np.ndarray:
        """Nearest class mean under the per-feature scaling (Bayes rule for equal priors)."""
        scale = np.broadcast_to(np.asarray(self.within_class_sigma, dtype=float), (self.dim,))
        scale = np.where(scale > 0, scale, 1.0)  # noiseless features: plain distance
        d = ((x[:, None, :] - self.class_means[None, :, :]) / scale) ** 2
        return np.argmin(d.sum(axis=2), axis=1)


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    shifted: np.ndarray = None  # bool mask of perturbed rows

    def __post_init__(self):
        if self.shifted is None:
            self.shifted = np.zeros(len(self.y), dtype=bool)

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.x[idx], self.y[idx], self.shifted[idx])


def generate_task(task: SyntheticTask, n: int, rng: np.random.Generator | int | None = None) -> Dataset:
    """Draw ``n`` labelled points with class counts balanced to within one."""
    if n < task.K:
        raise ValueError(f"need n >= K ({task.K}), got {n}")
    rng = np.random.default_rng(rng)
    y = rng.permutation(np.arange(n) % task.K)
    noise = rng.standard_normal((n, task.dim)) * np.asarray(task.within_class_sigma, dtype=float)
    return Dataset(task.class_means[y] + noise, y)


@dataclass(frozen=True)
class ShiftSpec:
    noise_sigma: float = 0.05
    noise_fraction: float = 0.4
    seed: int = 0

    def __post_init__(self):
        if self.noise_sigma < 0 or not 0.0 <= self.noise_fraction <= 1.0:
            raise ValueError("noise_sigma must be >= 0 and noise_fraction in [0, 1]")


def apply_shift(data: Dataset, shift: ShiftSpec) -> Dataset:
    """Add zero-mean Gaussian noise to a random ``noise_fraction`` of the rows.

    Returns a new dataset; the input is left untouched.
    """
    if len(data) == 0:
        raise ValueError("cannot shift an empty dataset")
    rng = np.random.default_rng([shift.seed, 0x5417])
    n = len(data)
    n_noisy = int(round(shift.noise_fraction * n))
    rows = rng.choice(n, size=n_noisy, replace=False)
    x = data.x.copy()
    x[rows] += rng.normal(0.0, shift.noise_sigma, size=(n_noisy, x.shape[1]))
    mask = data.shifted.copy()
    mask[rows] = True
    return Dataset(x, data.y.copy(), mask)


@dataclass(frozen=True)
class SplitPlan:
    """Train/calibration partition of a training pool (the test set is drawn separately)."""

    train_fraction: float = 0.9
    cal_fraction: float = 0.1

    def __post_init__(self):
        if min(self.train_fraction, self.cal_fraction) <= 0 or abs(self.train_fraction + self.cal_fraction - 1) > 1e-12:
            raise ValueError("train and calibration fractions must be positive and sum to 1")

    def split(self, n: int, rng: np.random.Generator | int | None = None) -> tuple[np.ndarray, np.ndarray]:
        rng = np.random.default_rng(rng)
        order = rng.permutation(n)
        n_cal = max(1, int(round(self.cal_fraction * n)))
        return np.sort(order[n_cal:]), np.sort(order[:n_cal])


class Strength(enum.Enum):
    WEAK = "weak"
    STRONG = "strong"


@dataclass(frozen=True)
class AugmentConfig:
    weak_sigma: float = 0.05
    strong_sigma: float = 0.3
    strong_dropout: float = 0.2


def augment(x: np.ndarray, strength: Strength, rng: np.random.Generator | int | None = None,
            config: AugmentConfig = AugmentConfig()) -> np.ndarray:
    """Weak view: additive Gaussian noise. Strong view: more noise plus feature dropout.

    Dropout is the inverted kind: surviving features are scaled by
    ``1 / (1 - p)`` so the strong view keeps the input's expectation.
    """
    rng = np.random.default_rng(rng)
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("features must be finite")
    if strength is Strength.WEAK:
        if config.weak_sigma == 0:
            return x.copy()
        return x + rng.normal(0.0, config.weak_sigma, size=x.shape)
    p = config.strong_dropout
    keep = rng.random(x.shape) >= p
    scale = 0.0 if p >= 1.0 else 1.0 / (1.0 - p)
    return x * keep * scale + rng.normal(0.0, config.strong_sigma, size=x.shape)

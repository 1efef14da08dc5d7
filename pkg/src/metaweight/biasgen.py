"""Synthetic dataset generation and training-bias injection.

Two biases are on offer: long-tailed class imbalance (class i keeps
base_count * mu^i samples with mu = factor^(-1/(c-1))) and label noise,
either uniform (resample over all c classes with probability p, so the
corrupted fraction concentrates at p*(c-1)/c) or flip (each class gets
two fixed target classes, p/2 each, corrupted fraction p).

Every generator is a pure function of (inputs, seed); RNG streams come
from counter-based Philox generators so data, noise and batch sampling
never share state.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

UNIFORM = "uniform"
FLIP = "flip"


def rng_stream(seed: int, *key: int) -> np.random.Generator:
    """A Philox generator on an independent stream keyed by (seed, *key)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


def derive_seed(seed: int, *key: int) -> int:
    """A child integer seed on the stream keyed by (seed, *key)."""
    return int(np.random.SeedSequence(seed, spawn_key=key).generate_state(1)[0])


@dataclass(frozen=True)
class GaussianMixtureSpec:
    """Isotropic Gaussian blob per class."""

    c: int
    d: int
    means: np.ndarray
    covariance_scale: float
    per_class_count: int

    def __post_init__(self):
        object.__setattr__(self, "means", np.asarray(self.means, dtype=np.float64))
        if self.c < 2:
            raise ValueError("need at least 2 classes")
        if self.d < 1:
            raise ValueError("need at least 1 feature dimension")
        if self.means.shape != (self.c, self.d):
            raise ValueError(f"means must have shape ({self.c}, {self.d}), got {self.means.shape}")
        if self.covariance_scale < 0:
            raise ValueError("covariance scale must be >= 0")
        if self.per_class_count < 1:
            raise ValueError("per_class_count must be >= 1")


@dataclass(frozen=True)
class ImbalanceSpec:
    base_count: int
    factor: float

    def __post_init__(self):
        if self.base_count < 1:
            raise ValueError("base_count must be >= 1")
        if self.factor < 1:
            raise ValueError("imbalance factor must be >= 1")


@dataclass(frozen=True)
class NoiseSpec:
    kind: str
    rate: float
    seed: int

    def __post_init__(self):
        if self.kind not in (UNIFORM, FLIP):
            raise ValueError(f"noise kind must be {UNIFORM!r} or {FLIP!r}, got {self.kind!r}")
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError("noise rate must be in [0, 1]")


@dataclass
class BiasedDataset:
    """Features plus observed/true labels and per-sample corruption flags."""

    features: np.ndarray
    observed_labels: np.ndarray
    true_labels: np.ndarray
    corrupted: np.ndarray
    c: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.observed_labels = np.asarray(self.observed_labels, dtype=np.int64)
        self.true_labels = np.asarray(self.true_labels, dtype=np.int64)
        self.corrupted = np.asarray(self.corrupted, dtype=bool)
        n = self.features.shape[0]
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-d matrix")
        for name, arr in (("observed_labels", self.observed_labels),
                          ("true_labels", self.true_labels),
                          ("corrupted", self.corrupted)):
            if arr.shape != (n,):
                raise ValueError(f"{name} must have shape ({n},), got {arr.shape}")
        if self.c < 2:
            raise ValueError("need at least 2 classes")
        for labels in (self.observed_labels, self.true_labels):
            if labels.size and (labels.min() < 0 or labels.max() >= self.c):
                raise ValueError("label out of range")
        if not np.array_equal(self.corrupted, self.observed_labels != self.true_labels):
            raise ValueError("corrupted flags inconsistent with labels")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def class_counts(self) -> np.ndarray:
        return np.bincount(self.observed_labels, minlength=self.c)

    def subset(self, indices: np.ndarray) -> "BiasedDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return BiasedDataset(
            self.features[indices],
            self.observed_labels[indices],
            self.true_labels[indices],
            self.corrupted[indices],
            self.c,
        )


def gen_gaussians(spec: GaussianMixtureSpec, seed: int) -> BiasedDataset:
    """Draw per_class_count samples around each class mean; labels clean."""
    rng = rng_stream(seed, 0)
    n = spec.c * spec.per_class_count
    features = np.empty((n, spec.d))
    labels = np.empty(n, dtype=np.int64)
    for k in range(spec.c):
        lo = k * spec.per_class_count
        hi = lo + spec.per_class_count
        features[lo:hi] = spec.means[k] + spec.covariance_scale * rng.normal(
            size=(spec.per_class_count, spec.d)
        )
        labels[lo:hi] = k
    return BiasedDataset(features, labels, labels.copy(), np.zeros(n, dtype=bool), spec.c)


def longtail_counts(c: int, spec: ImbalanceSpec) -> np.ndarray:
    """Per-class keep counts round(base_count * mu^i), mu = factor^(-1/(c-1))."""
    mu = spec.factor ** (-1.0 / (c - 1))
    counts = np.array([round(spec.base_count * mu**i) for i in range(c)], dtype=np.int64)
    if counts.min() < 1:
        raise ValueError(f"imbalance factor {spec.factor} empties a class (counts {counts.tolist()})")
    return counts


def apply_longtail(dataset: BiasedDataset, spec: ImbalanceSpec, seed: int) -> BiasedDataset:
    """Subsample classes exponentially: class 0 keeps base_count samples,
    class c-1 keeps about base_count/factor."""
    counts = dataset.class_counts
    if np.any(counts != spec.base_count):
        raise ValueError(f"expected a balanced dataset with {spec.base_count} per class, got {counts.tolist()}")
    keep_counts = longtail_counts(dataset.c, spec)
    rng = rng_stream(seed, 1)
    kept = []
    for k in range(dataset.c):
        members = np.flatnonzero(dataset.observed_labels == k)
        chosen = rng.choice(members, size=keep_counts[k], replace=False)
        kept.append(np.sort(chosen))
    return dataset.subset(np.concatenate(kept))


def apply_uniform_noise(dataset: BiasedDataset, p: float, seed: int) -> BiasedDataset:
    """With probability p, resample a label uniformly over all c classes.

    The resample may land on the true class, so the corrupted fraction
    is p*(c-1)/c in expectation, not p.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError("noise rate must be in [0, 1]")
    rng = rng_stream(seed, 2)
    hit = rng.random(dataset.n) < p
    draws = rng.integers(0, dataset.c, size=dataset.n)
    observed = np.where(hit, draws, dataset.observed_labels)
    return BiasedDataset(
        dataset.features.copy(),
        observed,
        dataset.true_labels.copy(),
        observed != dataset.true_labels,
        dataset.c,
    )


def apply_flip_noise(dataset: BiasedDataset, p: float, seed: int) -> BiasedDataset:
    """With probability p, flip a label to one of its class's two fixed
    target classes (p/2 each). Targets are drawn once per dataset and
    never equal the source class, so the corrupted fraction is p."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("noise rate must be in [0, 1]")
    if dataset.c < 3:
        raise ValueError("flip noise needs at least 3 classes for two distinct targets")
    rng = rng_stream(seed, 3)
    targets = np.empty((dataset.c, 2), dtype=np.int64)
    for k in range(dataset.c):
        others = np.array([j for j in range(dataset.c) if j != k])
        targets[k] = rng.choice(others, size=2, replace=False)
    hit = rng.random(dataset.n) < p
    side = rng.integers(0, 2, size=dataset.n)
    flipped = targets[dataset.observed_labels, side]
    observed = np.where(hit, flipped, dataset.observed_labels)
    return BiasedDataset(
        dataset.features.copy(),
        observed,
        dataset.true_labels.copy(),
        observed != dataset.true_labels,
        dataset.c,
    )


def split_meta(dataset: BiasedDataset, per_class: int, seed: int) -> tuple[BiasedDataset, BiasedDataset]:
    """Carve out a clean, exactly class-balanced meta set.

    Picks per_class samples with observed == true from every class;
    returns (meta_set, remainder), disjoint. per_class == 0 gives an
    empty meta set (training rejects it later).
    """
    if per_class < 0:
        raise ValueError("per_class must be >= 0")
    rng = rng_stream(seed, 4)
    picked = []
    for k in range(dataset.c):
        clean = np.flatnonzero((dataset.observed_labels == k) & ~dataset.corrupted)
        if clean.size < per_class:
            raise ValueError(
                f"class {k} has only {clean.size} clean samples, need {per_class}"
            )
        if per_class:
            picked.append(np.sort(rng.choice(clean, size=per_class, replace=False)))
    meta_idx = np.concatenate(picked) if picked else np.array([], dtype=np.int64)
    mask = np.zeros(dataset.n, dtype=bool)
    mask[meta_idx] = True
    return dataset.subset(meta_idx), dataset.subset(np.flatnonzero(~mask))


def sample_batch(dataset: BiasedDataset, size: int, rng: np.random.Generator) -> tuple[np.ndarray, np.random.Generator]:
    """Uniform sample of `size` distinct indices; the generator advances
    in place and is returned as the new state."""
    if size < 1 or size > dataset.n:
        raise ValueError(f"batch size must be in [1, {dataset.n}], got {size}")
    indices = rng.choice(dataset.n, size=size, replace=False)
    return indices, rng


def save_dataset(dataset: BiasedDataset, path) -> None:
    """CSV with one header record (N, d, c) then per-sample records
    (features..., observed, true, corrupted)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([dataset.n, dataset.d, dataset.c])
        for i in range(dataset.n):
            writer.writerow(
                [repr(float(v)) for v in dataset.features[i]]
                + [int(dataset.observed_labels[i]), int(dataset.true_labels[i]), int(dataset.corrupted[i])]
            )


def load_dataset(path) -> BiasedDataset:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty dataset file") from None
        if len(header) != 3:
            raise ValueError(f"{path}: header must be 'N,d,c', got {header}")
        n, d, c = (int(v) for v in header)
        features = np.empty((n, d))
        observed = np.empty(n, dtype=np.int64)
        true = np.empty(n, dtype=np.int64)
        corrupted = np.empty(n, dtype=bool)
        seen = 0
        for row in reader:
            if seen >= n:
                raise ValueError(f"{path}: more than {n} sample records")
            if len(row) != d + 3:
                raise ValueError(f"{path}: record {seen} has {len(row)} fields, expected {d + 3}")
            features[seen] = [float(v) for v in row[:d]]
            observed[seen] = int(row[d])
            true[seen] = int(row[d + 1])
            corrupted[seen] = bool(int(row[d + 2]))
            seen += 1
        if seen != n:
            raise ValueError(f"{path}: expected {n} sample records, found {seen}")
    return BiasedDataset(features, observed, true, corrupted, c)


def circle_means(c: int, radius: float = 2.0) -> np.ndarray:
    """Evenly spaced 2-d class means on a circle; a convenient default."""
    angles = 2.0 * np.pi * np.arange(c) / c
    return radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)

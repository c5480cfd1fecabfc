"""Synthetic data world.

A long-tailed "real" dataset drawn from a Gaussian mixture, an endless
generated stream whose samples carry feature noise and (noise-dependent)
label corruption, and the batch plumbing used by the trainer: append-mode
augmentation and three ways of drawing a test batch.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

REAL = "real"
GENERATED = "generated"

RARE_MAX = 10
COMMON_MAX = 100

TEST_STRATEGIES = ("all_classes", "pasted_classes", "all_images")


@dataclass(frozen=True)
class LabeledSample:
    features: np.ndarray
    label: int
    origin: str = REAL
    noise_scale: float = 0.0
    sample_id: int = -1


class Batch:
    """Ordered samples stored column-wise.

    ``ids`` are unique within a world: real samples are numbered from 0,
    eval samples follow, and generated samples get ids from a separate
    counter that starts at ``GENERATED_ID_BASE``.
    """

    __slots__ = ("features", "labels", "is_generated", "noise_scales", "ids")

    def __init__(self, features, labels, is_generated=None, noise_scales=None, ids=None):
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2:
            raise ValueError(f"features must be 2-d, got shape {features.shape}")
        n = features.shape[0]
        self.features = features
        self.labels = np.asarray(labels, dtype=np.int64).reshape(n)
        self.is_generated = (
            np.zeros(n, dtype=bool) if is_generated is None else np.asarray(is_generated, dtype=bool).reshape(n)
        )
        self.noise_scales = (
            np.zeros(n) if noise_scales is None else np.asarray(noise_scales, dtype=np.float64).reshape(n)
        )
        self.ids = np.full(n, -1, dtype=np.int64) if ids is None else np.asarray(ids, dtype=np.int64).reshape(n)

    @classmethod
    def empty(cls, input_dim: int) -> "Batch":
        return cls(np.zeros((0, input_dim)), np.zeros(0, dtype=np.int64))

    @classmethod
    def from_samples(cls, samples: Sequence[LabeledSample], input_dim: int | None = None) -> "Batch":
        if not samples:
            if input_dim is None:
                raise ValueError("input_dim is required for an empty sample list")
            return cls.empty(input_dim)
        return cls(
            np.stack([np.asarray(s.features, dtype=np.float64) for s in samples]),
            [s.label for s in samples],
            [s.origin == GENERATED for s in samples],
            [s.noise_scale for s in samples],
            [s.sample_id for s in samples],
        )

    def __len__(self) -> int:
        return self.features.shape[0]

    def __getitem__(self, i: int) -> LabeledSample:
        return LabeledSample(
            self.features[i].copy(),
            int(self.labels[i]),
            GENERATED if self.is_generated[i] else REAL,
            float(self.noise_scales[i]),
            int(self.ids[i]),
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    @property
    def origins(self) -> list[str]:
        return [GENERATED if g else REAL for g in self.is_generated]

    def take(self, index) -> "Batch":
        index = np.asarray(index, dtype=np.int64)
        return Batch(
            self.features[index], self.labels[index], self.is_generated[index],
            self.noise_scales[index], self.ids[index],
        )

    def concat(self, other: "Batch") -> "Batch":
        return Batch(
            np.concatenate([self.features, other.features.reshape(-1, self.input_dim)]),
            np.concatenate([self.labels, other.labels]),
            np.concatenate([self.is_generated, other.is_generated]),
            np.concatenate([self.noise_scales, other.noise_scales]),
            np.concatenate([self.ids, other.ids]),
        )

    def classes(self) -> list[int]:
        return sorted(set(int(c) for c in self.labels))

    def to_csv(self, path) -> None:
        """One row per sample: id, label, origin, noise_scale, f0..f{d-1}."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\r\n")
            writer.writerow(["id", "label", "origin", "noise_scale"] + [f"f{j}" for j in range(self.input_dim)])
            for i in range(len(self)):
                writer.writerow(
                    [int(self.ids[i]), int(self.labels[i]), GENERATED if self.is_generated[i] else REAL,
                     repr(float(self.noise_scales[i]))]
                    + [repr(float(v)) for v in self.features[i]]
                )

    @classmethod
    def from_csv(cls, path) -> "Batch":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = list(reader)
        dim = len(header) - 4
        if not rows:
            return cls.empty(dim)
        return cls(
            [[float(v) for v in r[4:]] for r in rows],
            [int(r[1]) for r in rows],
            [r[2] == GENERATED for r in rows],
            [float(r[3]) for r in rows],
            [int(r[0]) for r in rows],
        )


EvalSet = Batch

GENERATED_ID_BASE = 10**9


@dataclass
class WorldConfig:
    num_classes: int = 10
    input_dim: int = 16
    class_std: float = 0.3
    min_mean_distance: float = 1.5
    max_class_count: int = 200
    tail_exponent: float = 1.5
    noise_tiers: list[float] = field(default_factory=lambda: [0.0, 0.4, 1.0, 2.0, 4.0])
    tier_weights: list[float] = field(default_factory=lambda: [1.0, 1.0, 1.0, 1.0, 1.0])
    corruption_rate: float = 0.5
    eval_size: int = 2000
    seed: int = 0

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.class_std <= 0:
            raise ValueError("class_std must be positive")
        if self.max_class_count < 1:
            raise ValueError("max_class_count must be >= 1")
        if self.tail_exponent < 0:
            raise ValueError("tail_exponent must be non-negative")
        if not self.noise_tiers:
            raise ValueError("noise_tiers must be non-empty")
        if any(s < 0 for s in self.noise_tiers):
            raise ValueError("noise tiers must be non-negative")
        if len(self.tier_weights) != len(self.noise_tiers):
            raise ValueError("tier_weights must match noise_tiers in length")
        if any(w < 0 for w in self.tier_weights) or sum(self.tier_weights) <= 0:
            raise ValueError("tier_weights must be non-negative with a positive sum")
        if not 0.0 <= self.corruption_rate <= 1.0:
            raise ValueError("corruption_rate must lie in [0, 1]")
        if self.eval_size < 1:
            raise ValueError("eval_size must be >= 1")


def long_tail_counts(num_classes: int, max_count: int, exponent: float) -> np.ndarray:
    """Power-law class sizes ``max_count * (c + 1) ** -exponent``, at least 1."""
    ranks = np.arange(1, num_classes + 1, dtype=np.float64)
    return np.maximum(1, np.round(max_count * ranks ** (-exponent))).astype(np.int64)


def frequency_tier(count: int) -> str:
    if count <= RARE_MAX:
        return "rare"
    if count <= COMMON_MAX:
        return "common"
    return "frequent"


def simplex_distance(num_classes: int) -> float:
    """Largest achievable minimum pairwise distance of C unit vectors."""
    return float(np.sqrt(2.0 * num_classes / (num_classes - 1)))


def _rotated_simplex(rng: np.random.Generator, num_classes: int, dim: int) -> np.ndarray:
    C = num_classes
    centred = np.eye(C) - 1.0 / C
    centred /= np.linalg.norm(centred, axis=1, keepdims=True)
    # orthonormal basis of the sum-zero subspace, then a random embedding
    basis = np.linalg.svd(centred)[2][: C - 1].T
    q, r = np.linalg.qr(rng.normal(size=(dim, C - 1)))
    q *= np.sign(np.diag(r))
    return centred @ basis @ q.T


def _class_means(rng: np.random.Generator, num_classes: int, dim: int, min_dist: float) -> np.ndarray:
    """Unit-norm class means with pairwise distance >= ``min_dist`` where possible.

    Random directions are tried first. When that fails (the bound is near or
    above the simplex limit) a randomly rotated regular simplex is used,
    which attains the largest possible minimum distance.
    """
    for _ in range(200):
        means = rng.normal(size=(num_classes, dim))
        means /= np.linalg.norm(means, axis=1, keepdims=True)
        d = np.linalg.norm(means[:, None, :] - means[None, :, :], axis=-1)
        d[np.diag_indices(num_classes)] = np.inf
        if d.min() >= min_dist:
            return means
    if dim >= num_classes - 1:
        return _rotated_simplex(rng, num_classes, dim)
    return means


@dataclass
class RealDataset:
    samples: Batch
    class_counts: np.ndarray
    frequency_tier: list[str]
    class_index: list[np.ndarray]

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def num_classes(self) -> int:
        return len(self.class_counts)


class GeneratedStream:
    """Endless class-balanced source of noisy, possibly mislabeled samples.

    The stream owns its RNG. ``round_robin`` cycles classes deterministically
    (debugging aid); otherwise classes are uniform.
    """

    def __init__(self, means, class_std, noise_tiers, tier_weights, corruption_rate, seed,
                 round_robin: bool = False):
        self.means = np.asarray(means, dtype=np.float64)
        self.class_std = float(class_std)
        self.noise_tiers = np.asarray(noise_tiers, dtype=np.float64)
        w = np.asarray(tier_weights, dtype=np.float64)
        self.tier_probs = w / w.sum()
        self.corruption_rate = float(corruption_rate)
        self.scale_max = float(self.noise_tiers.max())
        self.rng = np.random.default_rng(seed)
        self.round_robin = round_robin
        self._next_class = 0
        self._next_id = GENERATED_ID_BASE

    @property
    def num_classes(self) -> int:
        return self.means.shape[0]

    @property
    def input_dim(self) -> int:
        return self.means.shape[1]

    def flip_probability(self, scale: float) -> float:
        if self.scale_max <= 0:
            return 0.0
        return self.corruption_rate * scale / self.scale_max

    def _draw(self, k: int, scales: np.ndarray | None) -> Batch:
        rng = self.rng
        C = self.num_classes
        if self.round_robin:
            classes = (self._next_class + np.arange(k)) % C
            self._next_class = int((self._next_class + k) % C)
        else:
            classes = rng.integers(0, C, size=k)
        if scales is None:
            scales = self.noise_tiers[rng.choice(len(self.noise_tiers), size=k, p=self.tier_probs)]
        pristine = self.means[classes] + self.class_std * rng.normal(size=(k, self.input_dim))
        features = pristine + scales[:, None] * rng.normal(size=(k, self.input_dim))
        flip = rng.random(size=k) < np.array([self.flip_probability(s) for s in scales])
        # uniform over the other C - 1 classes
        other = (classes + rng.integers(1, C, size=k)) % C
        labels = np.where(flip, other, classes)
        ids = self._next_id + np.arange(k)
        self._next_id += k
        return Batch(features, labels, np.ones(k, dtype=bool), scales, ids)

    def sample(self, k: int) -> Batch:
        if k < 0:
            raise ValueError("k must be non-negative")
        if k == 0:
            return Batch.empty(self.input_dim)
        return self._draw(k, None)

    def sample_at_tier(self, k: int, scale: float) -> Batch:
        """Draw ``k`` samples with a forced noise scale (distribution studies)."""
        if k == 0:
            return Batch.empty(self.input_dim)
        return self._draw(k, np.full(k, float(scale)))


class PoolStream:
    """Class-balanced draws (with replacement) from a finite candidate pool.

    Stands in for the generated stream once candidates have been mined
    offline. Classes absent from the pool are never drawn.
    """

    def __init__(self, pool: Batch, seed):
        if len(pool) == 0:
            raise ValueError("pool is empty")
        self.pool = pool
        self.input_dim = pool.input_dim
        self.rng = np.random.default_rng(seed)
        self._classes = np.array(pool.classes(), dtype=np.int64)
        self._members = [np.flatnonzero(pool.labels == c) for c in self._classes]

    def sample(self, k: int) -> Batch:
        if k == 0:
            return Batch.empty(self.input_dim)
        picks = self.rng.integers(0, len(self._classes), size=k)
        index = [m[self.rng.integers(0, len(m))] for m in (self._members[p] for p in picks)]
        return self.pool.take(index)


@dataclass
class World:
    real: RealDataset
    stream: GeneratedStream
    eval_set: Batch
    means: np.ndarray
    config: WorldConfig


def make_world(config: WorldConfig, stream_seed=None) -> World:
    """Build the real dataset, generated stream and held-out eval set.

    The real set and eval set depend only on ``config.seed``; the stream's
    RNG can be seeded independently through ``stream_seed``.
    """
    config.validate()
    root = np.random.SeedSequence(config.seed)
    means_ss, real_ss, eval_ss, stream_ss = root.spawn(4)
    C, d = config.num_classes, config.input_dim
    means = _class_means(np.random.default_rng(means_ss), C, d, config.min_mean_distance)

    counts = long_tail_counts(C, config.max_class_count, config.tail_exponent)
    rng = np.random.default_rng(real_ss)
    labels = np.repeat(np.arange(C), counts)
    feats = means[labels] + config.class_std * rng.normal(size=(labels.size, d))
    real = Batch(feats, labels, None, None, np.arange(labels.size))
    real_ds = RealDataset(
        samples=real,
        class_counts=counts,
        frequency_tier=[frequency_tier(int(n)) for n in counts],
        class_index=[np.flatnonzero(labels == c) for c in range(C)],
    )

    # class-balanced, pristine, ids continue after the real set
    rng = np.random.default_rng(eval_ss)
    ev_labels = np.arange(config.eval_size) % C
    ev_feats = means[ev_labels] + config.class_std * rng.normal(size=(config.eval_size, d))
    eval_set = Batch(ev_feats, ev_labels, None, None, labels.size + np.arange(config.eval_size))

    stream = GeneratedStream(
        means, config.class_std, config.noise_tiers, config.tier_weights, config.corruption_rate,
        stream_ss if stream_seed is None else stream_seed,
    )
    return World(real_ds, stream, eval_set, means, config)


def sample_real_batch(dataset: RealDataset, size: int, rng: np.random.Generator) -> Batch:
    if size < 1:
        raise ValueError("batch size must be >= 1")
    if size > len(dataset):
        raise ValueError(f"batch size {size} exceeds dataset size {len(dataset)}")
    return dataset.samples.take(rng.choice(len(dataset), size=size, replace=False))


def sample_generated(stream, k: int) -> Batch:
    return stream.sample(k)


def augment(real: Batch, gen: Batch) -> Batch:
    """Append-mode augmentation: ``real`` followed by ``gen``, order kept."""
    if len(real) == 0:
        raise ValueError("real batch must be non-empty")
    if len(gen) == 0:
        return real
    return real.concat(gen)


def sample_test_batch(
    dataset: RealDataset,
    strategy: str,
    gen_classes: Iterable[int],
    size: int,
    rng: np.random.Generator,
) -> Batch:
    """Draw a test batch from the real data.

    ``all_classes`` and ``pasted_classes`` pick a class uniformly (from all
    classes, or from those present in the generated batch) and then a sample
    uniformly within it; ``all_images`` samples uniformly over the dataset.
    Draws are with replacement.
    """
    if size < 1:
        raise ValueError("test batch size must be >= 1")
    if strategy == "all_images":
        return dataset.samples.take(rng.integers(0, len(dataset), size=size))
    if strategy == "all_classes":
        classes = np.arange(dataset.num_classes)
    elif strategy == "pasted_classes":
        classes = np.array(sorted(set(int(c) for c in gen_classes)), dtype=np.int64)
        if classes.size == 0:
            raise ValueError("pasted_classes sampling needs at least one generated class")
    else:
        raise ValueError(f"unknown sampling strategy {strategy!r}")
    picked = classes[rng.integers(0, classes.size, size=size)]
    index = [dataset.class_index[c][rng.integers(0, dataset.class_index[c].size)] for c in picked]
    return dataset.samples.take(index)

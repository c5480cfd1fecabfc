"""One-hidden-layer tanh classifier over a flat parameter vector.

Layout of the flat vector: ``W1 (d, h) | b1 (h) | W2 (h, C) | b2 (C)``,
row-major. Losses are sums over samples (never means), so the loss of an
augmented batch is exactly the loss of its real part plus the loss of its
generated part.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .datastream import Batch
from .numerics import DimensionError, NumericError, as_vector

COMPONENTS = ("cls", "aux")


@dataclass(frozen=True)
class ClassifierConfig:
    input_dim: int = 16
    hidden_dim: int = 32
    num_classes: int = 10
    seed: int = 0
    aux_weight: float = 0.01

    def __post_init__(self):
        if self.input_dim < 1 or self.hidden_dim < 1:
            raise ValueError("input_dim and hidden_dim must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")

    @property
    def num_params(self) -> int:
        d, h, c = self.input_dim, self.hidden_dim, self.num_classes
        return d * h + h + h * c + c

    def architecture_hash(self) -> bytes:
        """SHA-256 over the fields that fix the parameter layout and loss."""
        arch = {k: v for k, v in asdict(self).items() if k != "seed"}
        return hashlib.sha256(json.dumps(arch, sort_keys=True).encode()).digest()


@dataclass(frozen=True)
class LossSelector:
    components: frozenset = field(default_factory=lambda: frozenset({"cls"}))

    def __post_init__(self):
        comps = frozenset(self.components)
        object.__setattr__(self, "components", comps)
        if not comps:
            raise ValueError("a loss selector needs at least one component")
        unknown = comps - set(COMPONENTS)
        if unknown:
            raise ValueError(f"unknown loss components {sorted(unknown)}")

    @classmethod
    def of(cls, *names: str) -> "LossSelector":
        return cls(frozenset(names))

    @property
    def label(self) -> str:
        return "+".join(c for c in COMPONENTS if c in self.components)


CLS = LossSelector.of("cls")
ALL = LossSelector.of("cls", "aux")


@dataclass
class LossBreakdown:
    total: float
    per_sample: list[tuple[int, str, float]]
    by_component: dict[str, float]


class MLPClassifier:
    """Stateless model: every method takes the parameter vector explicitly."""

    def __init__(self, config: ClassifierConfig):
        self.config = config
        d, h, c = config.input_dim, config.hidden_dim, config.num_classes
        self._shapes = [(d, h), (h,), (h, c), (c,)]
        self._offsets = np.cumsum([0] + [int(np.prod(s)) for s in self._shapes])

    @property
    def num_params(self) -> int:
        return self.config.num_params

    def init_params(self, seed: int | None = None) -> np.ndarray:
        cfg = self.config
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        w1 = rng.normal(0.0, 1.0 / np.sqrt(cfg.input_dim), size=(cfg.input_dim, cfg.hidden_dim))
        w2 = rng.normal(0.0, 1.0 / np.sqrt(cfg.hidden_dim), size=(cfg.hidden_dim, cfg.num_classes))
        return np.concatenate([w1.ravel(), np.zeros(cfg.hidden_dim), w2.ravel(), np.zeros(cfg.num_classes)])

    def unpack(self, params):
        params = as_vector(params)
        if params.size != self.num_params:
            raise DimensionError(f"expected {self.num_params} parameters, got {params.size}")
        o = self._offsets
        return [params[o[i]:o[i + 1]].reshape(s) for i, s in enumerate(self._shapes)]

    def _check_batch(self, batch: Batch) -> None:
        if len(batch) == 0:
            raise ValueError("batch must be non-empty")
        if batch.input_dim != self.config.input_dim:
            raise DimensionError(f"feature dim {batch.input_dim} != model input_dim {self.config.input_dim}")
        if not np.all(np.isfinite(batch.features)):
            raise NumericError("non-finite features in batch")

    def logits(self, params, features: np.ndarray) -> np.ndarray:
        w1, b1, w2, b2 = self.unpack(params)
        return np.tanh(features @ w1 + b1) @ w2 + b2

    def _forward(self, params, batch: Batch):
        w1, b1, w2, b2 = self.unpack(params)
        hidden = np.tanh(batch.features @ w1 + b1)
        z = hidden @ w2 + b2
        z = z - z.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        return hidden, logp

    def per_sample_components(self, params, batch: Batch) -> dict[str, np.ndarray]:
        self._check_batch(batch)
        _, logp = self._forward(params, batch)
        n = len(batch)
        ce = -logp[np.arange(n), batch.labels]
        entropy = -(np.exp(logp) * logp).sum(axis=1)
        return {"cls": ce, "aux": self.config.aux_weight * entropy}

    def forward_loss(self, params, batch: Batch, selector: LossSelector = CLS) -> LossBreakdown:
        comps = self.per_sample_components(params, batch)
        by_component = {c: float(comps[c].sum()) for c in COMPONENTS if c in selector.components}
        per = sum(comps[c] for c in COMPONENTS if c in selector.components)
        origins = batch.origins
        per_sample = [(i, origins[i], float(per[i])) for i in range(len(batch))]
        return LossBreakdown(float(per.sum()), per_sample, by_component)

    def loss(self, params, batch: Batch, selector: LossSelector = CLS) -> float:
        comps = self.per_sample_components(params, batch)
        return float(sum(comps[c] for c in COMPONENTS if c in selector.components).sum())

    def _dlogits(self, logp: np.ndarray, labels: np.ndarray, selector: LossSelector) -> np.ndarray:
        p = np.exp(logp)
        n = logp.shape[0]
        g = np.zeros_like(p)
        if "cls" in selector.components:
            g += p
            g[np.arange(n), labels] -= 1.0
        if "aux" in selector.components:
            # d/dz of -sum p log p is -p * (log p + H)
            entropy = -(p * logp).sum(axis=1, keepdims=True)
            g += self.config.aux_weight * (-p * (logp + entropy))
        return g

    def backward(self, params, batch: Batch, selector: LossSelector = CLS) -> np.ndarray:
        """Exact gradient of the selected summed loss w.r.t. the flat params."""
        return self.loss_and_grad(params, batch, selector)[1]

    def loss_and_grad(self, params, batch: Batch, selector: LossSelector = CLS) -> tuple[float, np.ndarray]:
        self._check_batch(batch)
        w1, b1, w2, b2 = self.unpack(params)
        hidden, logp = self._forward(params, batch)
        p = np.exp(logp)
        n = len(batch)
        loss = 0.0
        if "cls" in selector.components:
            loss += float(-logp[np.arange(n), batch.labels].sum())
        if "aux" in selector.components:
            loss += float(self.config.aux_weight * -(p * logp).sum())
        dz = self._dlogits(logp, batch.labels, selector)
        dw2 = hidden.T @ dz
        db2 = dz.sum(axis=0)
        dpre = (dz @ w2.T) * (1.0 - hidden ** 2)
        dw1 = batch.features.T @ dpre
        db1 = dpre.sum(axis=0)
        return loss, np.concatenate([dw1.ravel(), db1, dw2.ravel(), db2])

    def per_sample_gradients(self, params, batch: Batch, selector: LossSelector = CLS) -> np.ndarray:
        """Row ``i`` is the gradient of sample ``i``'s loss; shape ``(n, P)``."""
        self._check_batch(batch)
        w1, b1, w2, b2 = self.unpack(params)
        hidden, logp = self._forward(params, batch)
        dz = self._dlogits(logp, batch.labels, selector)
        n = len(batch)
        dw2 = hidden[:, :, None] * dz[:, None, :]
        dpre = (dz @ w2.T) * (1.0 - hidden ** 2)
        dw1 = batch.features[:, :, None] * dpre[:, None, :]
        return np.concatenate([dw1.reshape(n, -1), dpre, dw2.reshape(n, -1), dz], axis=1)

    def predict(self, params, features: np.ndarray) -> np.ndarray:
        # np.argmax returns the first maximum, i.e. ties go to the lowest class
        return np.argmax(self.logits(params, np.asarray(features, dtype=np.float64)), axis=1)

    def accuracy(self, params, dataset: Batch) -> float:
        if len(dataset) == 0:
            raise ValueError("cannot score an empty dataset")
        return float(np.mean(self.predict(params, dataset.features) == dataset.labels))


def sgd_step(params, grad, lr: float) -> np.ndarray:
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    params = as_vector(params)
    grad = as_vector(grad)
    if params.shape != grad.shape:
        raise DimensionError(f"length mismatch: {params.size} vs {grad.size}")
    return params - lr * grad

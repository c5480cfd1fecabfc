"""Contribution estimators for a batch (or single sample) of generated data.

All variants answer the same question: how much would adding the generated
samples to this update lower the loss on a test batch? ``loss_diff`` measures
it directly with two virtual SGD steps; the gradient variants use the
first-order expansion and never touch the parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import numerics
from .datastream import Batch
from .model import CLS, LossSelector, MLPClassifier, sgd_step

ESTIMATOR_KINDS = ("loss_diff", "grad_dot", "grad_cache", "grad_cache_global")
CACHE_MODES = ("momentum", "global_average")


class ContractViolation(ValueError):
    pass


@dataclass(frozen=True)
class ContributionScore:
    value: float
    estimator_kind: str
    normalized: bool = False
    iteration: int = 0


@dataclass(frozen=True)
class GradCache:
    """Running summary of test-batch gradients.

    ``t`` counts updates; ``t == 0`` means nothing has been stored yet.
    """

    beta: float = 0.1
    mode: str = "momentum"
    t: int = 0
    C: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in CACHE_MODES:
            raise ValueError(f"unknown cache mode {self.mode!r}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")

    def updated(self, grad) -> "GradCache":
        grad = numerics.as_vector(grad)
        t = self.t + 1
        if t == 1:
            C = grad.copy()
        elif self.mode == "momentum":
            C = numerics.ema_update(self.C, grad, self.beta)
        else:
            C = ((t - 1) / t) * self.C + (1.0 / t) * grad
        if not np.all(np.isfinite(C)):
            raise numerics.NumericError("grad cache became non-finite")
        return replace(self, t=t, C=C)


def _check_alpha(alpha: float) -> None:
    if alpha <= 0:
        raise ValueError("alpha must be positive")


def _check_test(test_batch: Batch) -> None:
    if len(test_batch) == 0:
        raise ValueError("test batch must be non-empty")


def _is_null(real_batch: Batch, aug_batch: Batch) -> bool:
    return len(aug_batch) == len(real_batch)


def score_from_gradients(delta_grad, reference_grad, alpha: float, normalized: bool) -> float:
    """``alpha * <delta, ref>``, or the cosine of the two when normalized."""
    if normalized:
        return numerics.cosine(delta_grad, reference_grad)
    return alpha * numerics.dot(delta_grad, reference_grad)


def contribution_loss_diff(
    model: MLPClassifier,
    params,
    real_batch: Batch,
    aug_batch: Batch,
    test_batch: Batch,
    alpha: float,
    selector: LossSelector = CLS,
    iteration: int = 0,
) -> ContributionScore:
    _check_alpha(alpha)
    _check_test(test_batch)
    if _is_null(real_batch, aug_batch):
        return ContributionScore(0.0, "loss_diff", False, iteration)
    theta_real = sgd_step(params, model.backward(params, real_batch, selector), alpha)
    theta_aug = sgd_step(params, model.backward(params, aug_batch, selector), alpha)
    value = model.loss(theta_real, test_batch, selector) - model.loss(theta_aug, test_batch, selector)
    return ContributionScore(value, "loss_diff", False, iteration)


def gradient_difference(model: MLPClassifier, params, real_batch: Batch, aug_batch: Batch,
                        selector: LossSelector = CLS) -> np.ndarray:
    if _is_null(real_batch, aug_batch):
        return np.zeros(model.num_params)
    return model.backward(params, aug_batch, selector) - model.backward(params, real_batch, selector)


def contribution_grad_dot(
    model: MLPClassifier,
    params,
    real_batch: Batch,
    aug_batch: Batch,
    test_batch: Batch,
    alpha: float,
    selector: LossSelector = CLS,
    iteration: int = 0,
) -> ContributionScore:
    _check_alpha(alpha)
    _check_test(test_batch)
    delta = gradient_difference(model, params, real_batch, aug_batch, selector)
    test_grad = model.backward(params, test_batch, selector)
    return ContributionScore(score_from_gradients(delta, test_grad, alpha, False), "grad_dot", False, iteration)


def contribution_grad_cache(
    cache: GradCache,
    model: MLPClassifier,
    params,
    real_batch: Batch,
    aug_batch: Batch,
    test_batch: Batch,
    alpha: float,
    selector: LossSelector = CLS,
    normalized: bool = True,
    iteration: int = 0,
) -> tuple[ContributionScore, GradCache]:
    _check_alpha(alpha)
    _check_test(test_batch)
    cache = cache.updated(model.backward(params, test_batch, selector))
    delta = gradient_difference(model, params, real_batch, aug_batch, selector)
    kind = "grad_cache" if cache.mode == "momentum" else "grad_cache_global"
    value = score_from_gradients(delta, cache.C, alpha, normalized)
    return ContributionScore(value, kind, normalized, iteration), cache


def reference_gradient(model: MLPClassifier, params, reference: Batch, selector: LossSelector = CLS) -> np.ndarray:
    """Gradient of the summed loss over a whole reference set (e.g. all of R)."""
    return model.backward(params, reference, selector)


def contribution_single_offline(
    model: MLPClassifier,
    params,
    sample,
    test_gradient,
    alpha: float,
    selector: LossSelector = CLS,
    normalized: bool = False,
) -> ContributionScore:
    """First-order contribution of one sample against a frozen test gradient."""
    batch = sample if isinstance(sample, Batch) else Batch.from_samples([sample])
    if len(batch) != 1:
        raise ValueError("expected exactly one sample")
    g = model.backward(params, batch, selector)
    return ContributionScore(score_from_gradients(g, test_gradient, alpha, normalized), "offline", normalized)


def offline_scores(model: MLPClassifier, params, candidates: Batch, test_gradient, alpha: float,
                   selector: LossSelector = CLS, normalized: bool = False) -> np.ndarray:
    """Vectorised ``contribution_single_offline`` over many candidates."""
    if len(candidates) == 0:
        return np.zeros(0)
    grads = model.per_sample_gradients(params, candidates, selector)
    test_gradient = numerics.as_vector(test_gradient)
    if normalized:
        return np.array([numerics.cosine(g, test_gradient) for g in grads])
    return np.array([alpha * numerics.dot(g, test_gradient) for g in grads])


def generated_only_gradient(model: MLPClassifier, params, gen_batch: Batch,
                            selector: LossSelector = CLS) -> np.ndarray:
    """Gradient of the generated samples' loss alone.

    With sum losses and append-mode augmentation this equals
    ``grad(real + gen) - grad(real)`` while needing one forward pass.
    """
    if len(gen_batch) == 0:
        return np.zeros(model.num_params)
    if not np.all(gen_batch.is_generated):
        raise ContractViolation("generated_only_gradient received real-origin samples")
    return model.backward(params, gen_batch, selector)

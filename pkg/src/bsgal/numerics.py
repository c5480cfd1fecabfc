"""Flat-vector kernels shared by the model, estimators and trainer.

Everything works on 1-d float64 arrays. Reductions that feed decisions
(``dot``) run strictly in ascending index order so that results are
bit-reproducible regardless of BLAS build or thread count.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

EPS_NORM = 1e-12


class DimensionError(ValueError):
    """Vectors of mismatched length were combined."""


class NumericError(ArithmeticError):
    """A computation produced a non-finite value."""


def as_vector(values) -> np.ndarray:
    vec = np.asarray(values, dtype=np.float64)
    if vec.ndim != 1:
        raise DimensionError(f"expected a flat vector, got shape {vec.shape}")
    return vec


def _check_same_length(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")


def dot(a, b) -> float:
    """Inner product summed left to right (``cumsum`` is a sequential fold)."""
    a = as_vector(a)
    b = as_vector(b)
    _check_same_length(a, b)
    if a.size == 0:
        return 0.0
    return float(np.cumsum(a * b)[-1])


def norm(a) -> float:
    return float(np.sqrt(max(dot(a, a), 0.0)))


def cosine(a, b) -> float:
    """Cosine similarity; 0.0 when either vector has norm below ``EPS_NORM``."""
    a = as_vector(a)
    b = as_vector(b)
    _check_same_length(a, b)
    na = norm(a)
    nb = norm(b)
    if na < EPS_NORM or nb < EPS_NORM:
        return 0.0
    c = dot(a, b) / (na * nb)
    # rounding can push |c| a hair past 1
    return float(min(1.0, max(-1.0, c)))


def ema_update(cache, new, beta: float) -> np.ndarray:
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    cache = as_vector(cache)
    new = as_vector(new)
    _check_same_length(cache, new)
    return beta * cache + (1.0 - beta) * new


def finite_difference_gradient(
    loss_fn: Callable[[np.ndarray], float], params, h: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of ``loss_fn`` at ``params``.

    Only meant as a test oracle; costs ``2 * len(params)`` evaluations.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    theta = as_vector(params).copy()
    grad = np.empty_like(theta)
    for i in range(theta.size):
        orig = theta[i]
        theta[i] = orig + h
        up = float(loss_fn(theta.copy()))
        theta[i] = orig - h
        down = float(loss_fn(theta.copy()))
        theta[i] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NumericError(f"non-finite loss while perturbing coordinate {i}")
        grad[i] = (up - down) / (2.0 * h)
    return grad

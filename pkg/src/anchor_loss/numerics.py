"""Numerically stable elementary kernels and the finite-difference oracle."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

EPS = 1e-7
FD_STEP = 1e-5


def clamp_probability(q, floor: float = EPS):
    """Clamp probabilities to ``[floor, 1 - floor]``."""
    return np.clip(np.asarray(q, dtype=np.float64), floor, 1.0 - floor)


def stable_log(x, floor: float = EPS):
    """Return ``ln(max(x, floor))``; works on scalars and arrays."""
    if floor <= 0:
        raise ValueError("floor must be positive")
    out = np.log(np.maximum(np.asarray(x, dtype=np.float64), floor))
    return float(out) if np.ndim(out) == 0 else out


def sigmoid(z):
    """Logistic function that never overflows.

    Positive and negative inputs take separate branches so ``exp`` is only
    ever evaluated on non-positive arguments.
    """
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return float(out) if out.ndim == 0 else out


def softmax(z, axis: int = -1) -> np.ndarray:
    """Softmax along ``axis`` with max subtraction."""
    z = np.asarray(z, dtype=np.float64)
    if z.size == 0 or z.shape[axis] == 0:
        raise ValueError("empty logits")
    shifted = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(z, axis: int = -1) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.size == 0 or z.shape[axis] == 0:
        raise ValueError("empty logits")
    shifted = z - np.max(z, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


class OracleError(RuntimeError):
    """Raised when the finite-difference oracle meets a non-finite value."""


def finite_difference_gradient(
    f: Callable[[np.ndarray], float],
    x,
    h=FD_STEP,
) -> np.ndarray:
    """Central-difference gradient of a scalar function.

    Args:
        f: Function of a float64 array returning a scalar.
        x: Evaluation point, any shape. The result has the same shape.
        h: Step size, either a scalar or an array shaped like ``x`` for
            per-coordinate steps. Callers keep ``x +/- h`` inside the domain.

    Returns:
        Array of ``(f(x + h e_i) - f(x - h e_i)) / (2 h_i)``, with ``2 h_i``
        taken as the realised float difference of the two probe points.

    Raises:
        OracleError: if ``f`` returns a non-finite value at a perturbed point.
    """
    x = np.array(x, dtype=np.float64)
    steps = np.broadcast_to(np.asarray(h, dtype=np.float64), x.shape)
    if np.any(steps <= 0):
        raise ValueError("step size must be positive")
    flat = x.reshape(-1)
    flat_steps = steps.reshape(-1)
    grad = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        hi = flat_steps[i]
        # divide by the step that survives rounding, not the one requested
        x_plus, x_minus = orig + hi, orig - hi
        flat[i] = x_plus
        f_plus = float(f(x))
        flat[i] = x_minus
        f_minus = float(f(x))
        flat[i] = orig
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise OracleError(f"oracle evaluation failed at coordinate {i}")
        grad[i] = (f_plus - f_minus) / (x_plus - x_minus)
    return grad.reshape(x.shape)


def termwise_difference_gradient(
    terms: Callable[[np.ndarray], np.ndarray],
    x,
    h=FD_STEP,
) -> np.ndarray:
    """Central differences of ``sum(terms(x))`` with the subtraction done per term.

    Terms a coordinate does not touch cancel exactly, so a large unrelated
    term cannot swamp a tiny derivative with rounding noise. Terms that do
    depend on the coordinate (including cross terms) still contribute.
    """
    x = np.array(x, dtype=np.float64)
    steps = np.broadcast_to(np.asarray(h, dtype=np.float64), x.shape)
    if np.any(steps <= 0):
        raise ValueError("step size must be positive")
    flat = x.reshape(-1)
    flat_steps = steps.reshape(-1)
    grad = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        hi = flat_steps[i]
        x_plus, x_minus = orig + hi, orig - hi
        flat[i] = x_plus
        t_plus = np.asarray(terms(x), dtype=np.float64)
        flat[i] = x_minus
        t_minus = np.asarray(terms(x), dtype=np.float64)
        flat[i] = orig
        delta = t_plus - t_minus
        if not np.all(np.isfinite(delta)):
            raise OracleError(f"oracle evaluation failed at coordinate {i}")
        grad[i] = delta.sum() / (x_plus - x_minus)
    return grad.reshape(x.shape)


def probability_fd_steps(q, h: float = FD_STEP, rel: float = 1e-4) -> np.ndarray:
    """Per-coordinate FD steps that keep ``q +/- h`` strictly inside (0, 1).

    Near the boundary the step shrinks to ``rel`` times the distance to it,
    which bounds the relative truncation error of logarithmic terms.
    """
    q = np.asarray(q, dtype=np.float64)
    dist = np.minimum(q, 1.0 - q)
    return np.minimum(h, rel * dist)


def relative_error(a, b, abs_floor: float = 1e-8) -> np.ndarray:
    """Elementwise relative error; zero where both values are within ``abs_floor``.

    Entries whose absolute difference is below ``abs_floor`` count as exact,
    which is the near-zero escape hatch of the gradient contract.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    diff = np.abs(a - b)
    scale = np.maximum(np.abs(a), np.abs(b))
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(scale > 0, diff / scale, 0.0)
    return np.where(diff < abs_floor, 0.0, rel)


def seeded_rng(seed: int) -> np.random.Generator:
    """Deterministic random stream.

    PCG64 output is specified bit-for-bit by numpy, so a seed reproduces the
    same uniform, normal and permutation draws on every platform.
    """
    return np.random.Generator(np.random.PCG64(int(seed)))

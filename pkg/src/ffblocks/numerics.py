"""Dense float64 numerics: stable scalar nonlinearities, affine maps, row
normalization, and a central-difference gradient oracle.

Matrices are row-major ``numpy.float64`` 2-D arrays; a "vector" is a 1-D
array. Every function here is pure and safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

Array = np.ndarray

REL_ERR_FLOOR = 1e-8


@dataclass(frozen=True)
class GradCheckReport:
    """Elementwise comparison of an analytic gradient against an oracle."""

    max_rel_err: float
    max_abs_err: float
    param_count: int


def softplus(u):
    """log(1 + e^u), overflow-free for |u| well past 1e3.

    Equivalent to max(u, 0) + log1p(e^{-|u|}).
    """
    return np.logaddexp(0.0, u)


def sigmoid(u):
    """1 / (1 + e^{-u}) in (0, 1), stable on both tails."""
    return expit(u)


def relu(u):
    return np.maximum(u, 0.0)


def affine_forward(x: Array, weights: Array, bias: Array) -> Array:
    """y = x @ weights + bias with explicit shape checking."""
    x = np.asarray(x, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if x.ndim != 2 or weights.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise ValueError(
            f"affine shape mismatch: x {x.shape} incompatible with weights {weights.shape}"
        )
    if bias.shape != (weights.shape[1],):
        raise ValueError(
            f"affine bias mismatch: bias {bias.shape} vs weights {weights.shape}"
        )
    return x @ weights + bias


def l2_normalize_rows(x: Array, eps: float = 1e-12) -> Array:
    """Divide each row by max(||row||_2, eps).

    Rows with norm >= eps come out unit length; smaller rows (including
    zero rows) are divided by eps and keep norm < 1.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.maximum(norms, eps)


def finite_diff_grad(f, params: Array, h: float = 1e-4) -> Array:
    """Central-difference gradient (f(p + h e_i) - f(p - h e_i)) / (2h).

    ``f`` maps a parameter array (any shape) to a scalar. This is the
    independent oracle every analytic gradient in the repo is checked
    against; keep it free of any shared code with those gradients.
    """
    if h <= 0:
        raise ValueError(f"h must be positive, got {h}")
    params = np.asarray(params, dtype=np.float64)
    grad = np.zeros_like(params)
    for i in range(params.size):
        step = np.zeros_like(params)
        step.flat[i] = h
        grad.flat[i] = (f(params + step) - f(params - step)) / (2.0 * h)
    return grad


def relative_errors(a: Array, b: Array, floor: float = REL_ERR_FLOOR) -> Array:
    """|a - b| / max(|a|, |b|, floor), elementwise."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return np.abs(a - b) / denom


def compare_gradients(analytic: Array, numeric: Array,
                      floor: float = REL_ERR_FLOOR) -> GradCheckReport:
    """Summarize the agreement between an analytic gradient and an oracle."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.shape != numeric.shape:
        raise ValueError(
            f"gradient shape mismatch: {analytic.shape} vs {numeric.shape}"
        )
    rel = relative_errors(analytic, numeric, floor)
    abs_err = np.abs(analytic - numeric)
    return GradCheckReport(
        max_rel_err=float(rel.max()) if rel.size else 0.0,
        max_abs_err=float(abs_err.max()) if abs_err.size else 0.0,
        param_count=int(analytic.size),
    )

"""Scalar calculus of the cumulative-goodness objective.

Notation used throughout the package: ``m`` is a block's current margin
(positive-stream goodness minus negative-stream goodness), ``P`` is the
plain prefix sum of earlier blocks' margins, ``M = m + gamma * P`` is the
history-mixed margin fed to the barrier, and ``R`` is the attenuation
ratio by which accumulated history rescales the block's local gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import Array, sigmoid, softplus

GATE_MODES = ("off", "cumulative", "prev")


class RegimeError(ValueError):
    """Raised when a bound is requested outside the regime it holds in."""


@dataclass(frozen=True)
class GateConfig:
    """Hardness gate on the history weight gamma.

    ``mode="off"`` keeps gamma at ``gamma0``. The other modes multiply
    gamma0 by sigmoid(tau * (kappa - g)), where g is the batch-mean
    positive goodness accumulated before the block (``cumulative``) or
    produced by the immediately previous block (``prev``). With
    ``cumulative_uses_mixed`` the gate reads the gamma-mixed running
    goodness instead of the plain sum.
    """

    mode: str = "off"
    kappa: float = 0.0
    tau: float = 1.0
    gamma0: float = 0.7
    cumulative_uses_mixed: bool = False

    def __post_init__(self):
        if self.mode not in GATE_MODES:
            raise ValueError(f"gate mode must be one of {GATE_MODES}, got {self.mode!r}")
        if not 0.0 <= self.gamma0 <= 1.0:
            raise ValueError(f"gamma0 must lie in [0, 1], got {self.gamma0}")
        if self.tau < 0.0:
            raise ValueError(f"tau must be >= 0, got {self.tau}")


@dataclass
class MarginTrace:
    """Per-example, per-block margins for both negative streams.

    ``m_*`` have shape (L, B). ``p_*[d]`` is the plain prefix sum of
    margins over blocks j < d, so ``p_*[0] == 0`` and
    ``p_*[d] == p_*[d-1] + m_*[d-1]``. ``gamma_eff[d]`` records the
    history weight actually used at block d.
    """

    m_nl: Array
    m_ni: Array
    p_nl: Array
    p_ni: Array
    gamma_eff: Array

    @classmethod
    def from_margins(cls, m_nl: Array, m_ni: Array, gamma_eff: Array) -> "MarginTrace":
        m_nl = np.asarray(m_nl, dtype=np.float64)
        m_ni = np.asarray(m_ni, dtype=np.float64)
        return cls(
            m_nl=m_nl,
            m_ni=m_ni,
            p_nl=prefix_margins(m_nl),
            p_ni=prefix_margins(m_ni),
            gamma_eff=np.asarray(gamma_eff, dtype=np.float64),
        )

    @property
    def depth(self) -> int:
        return self.m_nl.shape[0]

    def block(self, d: int, stream: str):
        """(m, P) arrays for one block and one negative stream."""
        if stream == "nl":
            return self.m_nl[d], self.p_nl[d]
        if stream == "ni":
            return self.m_ni[d], self.p_ni[d]
        raise ValueError(f"stream must be 'nl' or 'ni', got {stream!r}")


@dataclass(frozen=True)
class AttenuationStats:
    """Batch summary of the attenuation ratio at one block."""

    mean_ratio: float
    min_ratio: float
    max_ratio: float
    free_riding: float
    frac_prev_nonneg: float


def prefix_margins(m: Array) -> Array:
    """P[d] = sum_{j<d} m[j] along axis 0; P[0] = 0."""
    m = np.asarray(m, dtype=np.float64)
    p = np.zeros_like(m)
    if m.shape[0] > 1:
        p[1:] = np.cumsum(m[:-1], axis=0)
    return p


def cumulative_margin(m_d, p_prev, gamma: float):
    """M = m_d + gamma * P_prev.

    Callers must treat ``p_prev`` as a constant: no gradient ever flows
    through the accumulated history.
    """
    if np.any(np.asarray(gamma) < 0.0) or np.any(np.asarray(gamma) > 1.0):
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    return np.asarray(m_d, dtype=np.float64) + gamma * np.asarray(p_prev, dtype=np.float64)


def barrier(u, beta):
    """Smooth hinge softplus(-beta * u), stable on both tails."""
    if np.any(np.asarray(beta) <= 0):
        raise ValueError(f"beta must be positive, got {beta}")
    return softplus(-beta * np.asarray(u, dtype=np.float64))


def barrier_deriv(u, beta):
    """d/du barrier(u, beta) = -beta * sigmoid(-beta * u); strictly negative."""
    if np.any(np.asarray(beta) <= 0):
        raise ValueError(f"beta must be positive, got {beta}")
    return -beta * sigmoid(-beta * np.asarray(u, dtype=np.float64))


def attenuation_ratio(m, p, gamma, beta):
    """(1 + e^{beta m}) / (1 + e^{beta (m + gamma P)}), overflow-free.

    Equals |barrier_deriv(m + gamma P)| / |barrier_deriv(m)|: the fraction
    of the purely local discrimination gradient that survives history
    mixing. Stays finite for exponents up to ~1e3; values above 1 occur
    when P < 0 (history can amplify outside the separated regime).

    In the separated regime (m >= 0, gamma P >= 0) the ratio is evaluated
    as e^{-beta gamma P} * (1 + e^{-beta m}) / (1 + e^{-beta M}), whose
    leading factor is the same float expression as the sandwich bounds;
    monotone rounding then keeps the bounds exact even where the
    inequality approaches equality at float resolution. Elsewhere the
    log-space form exp(softplus(beta m) - softplus(beta M)) is used.
    """
    if np.any(np.asarray(beta) <= 0):
        raise ValueError(f"beta must be positive, got {beta}")
    m = np.asarray(m, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    bm = beta * m
    big_m = beta * (m + gamma * p)
    log_form = np.exp(softplus(bm) - softplus(big_m))
    separated = (m >= 0.0) & (gamma * p >= 0.0)
    with np.errstate(over="ignore", invalid="ignore"):
        decay = np.exp(-beta * gamma * p)
        corrected = decay * ((1.0 + np.exp(-bm)) / (1.0 + np.exp(-big_m)))
    return np.where(separated, corrected, log_form)


def attenuation_bounds(m, p, gamma, beta):
    """Sandwich (e^{-beta gamma P}, min(1, 2 e^{-beta gamma P})).

    Only valid in the already-separated regime m >= 0, P >= 0,
    gamma >= 0; outside it the ratio can exceed 1 and the bounds are
    vacuous, so we refuse with :class:`RegimeError` instead.
    """
    if np.any(np.asarray(beta) <= 0):
        raise ValueError(f"beta must be positive, got {beta}")
    if np.any(np.asarray(gamma) < 0):
        raise RegimeError(f"bounds require gamma >= 0, got {gamma}")
    m = np.asarray(m, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if np.any(m < 0) or np.any(p < 0):
        raise RegimeError("bounds require m >= 0 and P >= 0 on every example")
    decay = np.exp(-beta * gamma * p)
    return decay, np.minimum(1.0, 2.0 * decay)


def free_riding_index(m, p, gamma: float, beta: float) -> float:
    """Mean over examples of 1 - min(1, R); lies in [0, 1).

    The clip keeps examples with negative upstream margin (where R > 1)
    from pushing the index negative; they contribute exactly 0.
    """
    m = np.asarray(m, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if m.size == 0:
        raise ValueError("free_riding_index requires a non-empty example set")
    r = attenuation_ratio(m, p, gamma, beta)
    return float(np.mean(1.0 - np.minimum(1.0, r)))


def attenuation_stats(m, p, gamma: float, beta: float) -> AttenuationStats:
    """Per-block attenuation summary over a batch of examples."""
    m = np.asarray(m, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if m.size == 0:
        raise ValueError("attenuation_stats requires a non-empty example set")
    r = attenuation_ratio(m, p, gamma, beta)
    return AttenuationStats(
        mean_ratio=float(r.mean()),
        min_ratio=float(r.min()),
        max_ratio=float(r.max()),
        free_riding=float(np.mean(1.0 - np.minimum(1.0, r))),
        frac_prev_nonneg=float(np.mean(p >= 0.0)),
    )


def effective_gamma(gate: GateConfig, g_cumulative: float, g_prev: float) -> float:
    """History weight after the hardness gate; always in [0, gamma0]."""
    if gate.mode == "off":
        return gate.gamma0
    if gate.mode == "cumulative":
        return gate.gamma0 * float(sigmoid(gate.tau * (gate.kappa - g_cumulative)))
    return gate.gamma0 * float(sigmoid(gate.tau * (gate.kappa - g_prev)))

"""Block-level training objectives.

Every loss here is a mean over a batch and is differentiated analytically
with respect to the three per-example goodness vectors (positive,
wrong-label, wrong-image). Accumulated history -- the gamma-mixed running
goodness from earlier blocks and the plain prefix sums of margins -- always
enters as a constant: residual weights and compensation coefficients are
computed from those constants and carry no gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import Array, sigmoid, softplus
from .goodness import attenuation_ratio


@dataclass(frozen=True)
class LossWeights:
    """Objective hyperparameters.

    beta drives the margin barriers, alpha the separation barriers, theta
    is the goodness threshold of the margin head, eta blends the
    wrong-label / wrong-image streams, (lambda0, rho) set the depth-scaled
    current-block weight, and (w_min, w_max) clip the residual weights.
    """

    beta: float = 4.0
    alpha: float = 4.0
    theta: float = 1.0
    eta: float = 0.5
    lambda_margin: float = 1.0
    lambda_block: float = 1.0
    lambda0: float = 0.25
    rho: float = 3.0
    lambda_depth: float = 0.0
    delta_pos: float = 0.1
    delta_neg: float = 0.1
    w_min: float = 0.1
    w_max: float = 10.0

    def __post_init__(self):
        if self.beta <= 0 or self.alpha <= 0:
            raise ValueError("beta and alpha must be positive")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")
        if min(self.lambda_margin, self.lambda_block, self.lambda0, self.rho,
               self.lambda_depth, self.delta_pos, self.delta_neg) < 0:
            raise ValueError("loss weights and margins must be non-negative")
        if not 0.0 < self.w_min <= 1.0 <= self.w_max:
            raise ValueError(
                f"need 0 < w_min <= 1 <= w_max, got ({self.w_min}, {self.w_max})"
            )


@dataclass
class BlockLossBreakdown:
    """Weighted components of one block's loss; they sum to ``total``.

    ``nl`` and ``ni`` hold the raw (unweighted, unblended) per-stream
    sub-terms for inspection.
    """

    total: float
    aspect_margin: float
    block_cumulative: float
    current_block: float
    depth_order: float
    mgc: float
    nl: dict = field(default_factory=dict)
    ni: dict = field(default_factory=dict)


def _as_batch(*vecs):
    out = [np.asarray(v, dtype=np.float64).reshape(-1) for v in vecs]
    n = out[0].size
    for v in out[1:]:
        if v.size != n:
            raise ValueError(f"batch length mismatch: {n} vs {v.size}")
    if n == 0:
        raise ValueError("empty batch")
    return out


def sep_loss(a, b, alpha: float) -> float:
    """mean softplus(-alpha * (a - b)): push a above b."""
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    a, b = _as_batch(a, b)
    return float(np.mean(softplus(-alpha * (a - b))))


def margin_loss(g_pos, g_neg, theta: float) -> float:
    """mean softplus(theta - g_pos) + mean softplus(g_neg - theta).

    Pushes positive goodness above the threshold and negative goodness
    below it.
    """
    g_pos, g_neg = _as_batch(g_pos, g_neg)
    return float(np.mean(softplus(theta - g_pos)) + np.mean(softplus(g_neg - theta)))


def block_cumulative_loss(g_pos, g_nl, g_ni, eta: float, alpha: float) -> float:
    """eta-blend of separation losses on cumulative goodness scores."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    return (1.0 - eta) * sep_loss(g_pos, g_nl, alpha) + eta * sep_loss(g_pos, g_ni, alpha)


def residual_weights(p_prev, beta: float, w_min: float, w_max: float) -> Array:
    """Mean-one weights emphasizing examples with small upstream margin.

    Three steps: raw a_i = sigmoid(-beta * P_i); clipped
    u_i = clip(a_i / mean(a), w_min, w_max); final w_i = u_i / mean(u).
    The result has mean exactly 1 and a deterministic floor of
    w_min / w_max (re-normalization can push weights below w_min itself).
    """
    if not 0.0 < w_min <= 1.0 <= w_max:
        raise ValueError(f"need 0 < w_min <= 1 <= w_max, got ({w_min}, {w_max})")
    (p_prev,) = _as_batch(p_prev)
    raw = sigmoid(-beta * p_prev)
    clipped = np.clip(raw / raw.mean(), w_min, w_max)
    return clipped / clipped.mean()


def depth_scaled_lambda(d: int, depth: int, lambda0: float, rho: float) -> float:
    """lambda0 * (1 + rho * d / (L - 1)): deeper blocks get more weight."""
    if depth < 2:
        raise ValueError(f"depth scaling needs L >= 2, got {depth}")
    if not 0 <= d < depth:
        raise ValueError(f"block index {d} outside [0, {depth})")
    return lambda0 * (1.0 + rho * (d / (depth - 1)))


def current_block_loss(m_nl, m_ni, w_nl, w_ni, eta: float, beta: float) -> float:
    """eta-blend of residual-weighted barriers on current-block margins.

    The weights are constants with respect to gradients; they come from
    detached upstream margins.
    """
    m_nl, w_nl = _as_batch(m_nl, w_nl)
    m_ni, w_ni = _as_batch(m_ni, w_ni)
    loss_nl = float(np.mean(w_nl * softplus(-beta * m_nl)))
    loss_ni = float(np.mean(w_ni * softplus(-beta * m_ni)))
    return (1.0 - eta) * loss_nl + eta * loss_ni


def depth_order_loss(g_pos_d, g_pos_prev, g_negs_d, g_negs_prev,
                     delta_pos: float, delta_neg: float) -> float:
    """Penalty on violated per-depth score increments.

    mean softplus(delta_pos - (G+_d - G+_{d-1})) plus, for each negative
    stream, mean softplus(delta_neg - (G-_{d-1} - G-_d)). Undefined at
    block 0; callers skip it there.
    """
    if isinstance(g_negs_d, np.ndarray) and g_negs_d.ndim == 1:
        g_negs_d, g_negs_prev = [g_negs_d], [g_negs_prev]
    g_pos_d, g_pos_prev = _as_batch(g_pos_d, g_pos_prev)
    total = float(np.mean(softplus(delta_pos - (g_pos_d - g_pos_prev))))
    for gn_d, gn_prev in zip(g_negs_d, g_negs_prev):
        gn_d, gn_prev = _as_batch(gn_d, gn_prev)
        total += float(np.mean(softplus(delta_neg - (gn_prev - gn_d))))
    return total


def mgc_loss(m, p_prev, gamma: float, beta: float, c_d: float,
             eps: float = 0.0):
    """Attenuation-compensated barrier for one negative stream.

    Adds a local term sized to fill the gradient removed by history
    mixing: lambda_i = max(0, c_d - s(M_i) / (s(m_i) + eps)) with
    s(u) = sigmoid(-beta u), held constant under differentiation, and
    loss = mean(barrier(M_i) + lambda_i * barrier(m_i)). With
    gamma * P >= 0 and eps = 0 the per-example unreduced margin-gradient
    magnitude is exactly c_d * beta * s(m_i); the clip keeps the local
    term from subtracting gradient when R exceeds c_d.

    Returns (loss, per-example lambda vector).
    """
    if c_d < 1.0:
        raise ValueError(f"c_d must be >= 1, got {c_d}")
    if eps < 0.0:
        raise ValueError(f"eps must be >= 0, got {eps}")
    m, p_prev = _as_batch(m, p_prev)
    big_m = m + gamma * p_prev
    if eps == 0.0:
        ratio = attenuation_ratio(m, p_prev, gamma, beta)
    else:
        s_m = sigmoid(-beta * m)
        s_big = sigmoid(-beta * big_m)
        ratio = s_big / (s_m + eps)
    lam = np.maximum(0.0, c_d - ratio)
    loss = float(np.mean(softplus(-beta * big_m) + lam * softplus(-beta * m)))
    return loss, lam


def mgc_margin_grads(m, p_prev, gamma: float, beta: float, lam) -> Array:
    """Per-example d/dm of the unreduced compensated barrier (lambda fixed)."""
    m, p_prev, lam = _as_batch(m, p_prev, lam)
    big_m = m + gamma * p_prev
    return -beta * sigmoid(-beta * big_m) - lam * beta * sigmoid(-beta * m)


def block_loss_and_grads(
    g_pos, g_nl, g_ni,
    prev_pos, prev_nl, prev_ni,
    p_nl, p_ni,
    weights: LossWeights,
    d: int,
    depth: int,
    gamma: float,
    mgc_enabled: bool = False,
    mgc_c: float = 1.0,
    mgc_eps: float = 0.0,
):
    """Full block objective plus its analytic goodness gradients.

    ``g_*`` are the block's current goodness vectors; ``prev_*`` the
    gamma-mixed cumulative goodness through block d-1; ``p_*`` the plain
    prefix sums of margins. All history arguments are constants.

    Returns (BlockLossBreakdown, dg_pos, dg_nl, dg_ni).
    """
    g_pos, g_nl, g_ni, prev_pos, prev_nl, prev_ni, p_nl, p_ni = _as_batch(
        g_pos, g_nl, g_ni, prev_pos, prev_nl, prev_ni, p_nl, p_ni)
    w = weights
    n = g_pos.size
    cum_pos = g_pos + gamma * prev_pos
    cum_nl = g_nl + gamma * prev_nl
    cum_ni = g_ni + gamma * prev_ni
    m_nl = g_pos - g_nl
    m_ni = g_pos - g_ni
    if d > 0:
        w_nl = residual_weights(p_nl, w.beta, w.w_min, w.w_max)
        w_ni = residual_weights(p_ni, w.beta, w.w_min, w.w_max)
    else:
        w_nl = np.ones(n)
        w_ni = np.ones(n)

    dg_pos = np.zeros(n)
    dg_nl = np.zeros(n)
    dg_ni = np.zeros(n)

    # Margin head on cumulative goodness. The positive term is shared by
    # both stream blends, so its gradient carries weight (1-eta)+eta = 1.
    margin_nl = margin_loss(cum_pos, cum_nl, w.theta)
    margin_ni = margin_loss(cum_pos, cum_ni, w.theta)
    aspect_raw = (1.0 - w.eta) * margin_nl + w.eta * margin_ni
    lam_m = w.lambda_margin
    dg_pos += lam_m * (-sigmoid(w.theta - cum_pos)) / n
    dg_nl += lam_m * (1.0 - w.eta) * sigmoid(cum_nl - w.theta) / n
    dg_ni += lam_m * w.eta * sigmoid(cum_ni - w.theta) / n

    # Cumulative discrimination (separation barriers on mixed scores).
    sep_nl_raw = sep_loss(cum_pos, cum_nl, w.alpha)
    sep_ni_raw = sep_loss(cum_pos, cum_ni, w.alpha)
    block_raw = (1.0 - w.eta) * sep_nl_raw + w.eta * sep_ni_raw
    s_nl = sigmoid(-w.alpha * (cum_pos - cum_nl))
    s_ni = sigmoid(-w.alpha * (cum_pos - cum_ni))
    dg_pos += w.lambda_block * (-w.alpha) * ((1.0 - w.eta) * s_nl + w.eta * s_ni) / n
    dg_nl += w.lambda_block * w.alpha * (1.0 - w.eta) * s_nl / n
    dg_ni += w.lambda_block * w.alpha * w.eta * s_ni / n

    # Depth-scaled residual-weighted current-block barriers. A single-block
    # network has no depth axis to scale over; it gets the base weight.
    lam_curr = w.lambda0 if depth < 2 else depth_scaled_lambda(d, depth, w.lambda0, w.rho)
    curr_nl_raw = float(np.mean(w_nl * softplus(-w.beta * m_nl)))
    curr_ni_raw = float(np.mean(w_ni * softplus(-w.beta * m_ni)))
    curr_raw = (1.0 - w.eta) * curr_nl_raw + w.eta * curr_ni_raw
    dm_nl = -w.beta * w_nl * sigmoid(-w.beta * m_nl) / n
    dm_ni = -w.beta * w_ni * sigmoid(-w.beta * m_ni) / n
    dg_pos += lam_curr * ((1.0 - w.eta) * dm_nl + w.eta * dm_ni)
    dg_nl += lam_curr * (1.0 - w.eta) * (-dm_nl)
    dg_ni += lam_curr * w.eta * (-dm_ni)

    # Depth-order increments on cumulative scores (undefined at block 0).
    depth_raw = 0.0
    if d > 0:
        depth_raw = depth_order_loss(cum_pos, prev_pos, [cum_nl, cum_ni],
                                     [prev_nl, prev_ni], w.delta_pos, w.delta_neg)
        dg_pos += w.lambda_depth * (-sigmoid(w.delta_pos - (cum_pos - prev_pos))) / n
        dg_nl += w.lambda_depth * sigmoid(w.delta_neg - (prev_nl - cum_nl)) / n
        dg_ni += w.lambda_depth * sigmoid(w.delta_neg - (prev_ni - cum_ni)) / n

    # Optional attenuation-compensated local term.
    mgc_total = 0.0
    mgc_nl_raw = mgc_ni_raw = 0.0
    if mgc_enabled:
        mgc_nl_raw, lam_nl = mgc_loss(m_nl, p_nl, gamma, w.beta, mgc_c, mgc_eps)
        mgc_ni_raw, lam_ni = mgc_loss(m_ni, p_ni, gamma, w.beta, mgc_c, mgc_eps)
        mgc_total = (1.0 - w.eta) * mgc_nl_raw + w.eta * mgc_ni_raw
        dmg_nl = mgc_margin_grads(m_nl, p_nl, gamma, w.beta, lam_nl) / n
        dmg_ni = mgc_margin_grads(m_ni, p_ni, gamma, w.beta, lam_ni) / n
        dg_pos += (1.0 - w.eta) * dmg_nl + w.eta * dmg_ni
        dg_nl += (1.0 - w.eta) * (-dmg_nl)
        dg_ni += w.eta * (-dmg_ni)

    breakdown = BlockLossBreakdown(
        total=(lam_m * aspect_raw + w.lambda_block * block_raw
               + lam_curr * curr_raw + w.lambda_depth * depth_raw + mgc_total),
        aspect_margin=lam_m * aspect_raw,
        block_cumulative=w.lambda_block * block_raw,
        current_block=lam_curr * curr_raw,
        depth_order=w.lambda_depth * depth_raw,
        mgc=mgc_total,
        nl={"margin": margin_nl, "sep": sep_nl_raw, "current": curr_nl_raw,
            "mgc": mgc_nl_raw},
        ni={"margin": margin_ni, "sep": sep_ni_raw, "current": curr_ni_raw,
            "mgc": mgc_ni_raw},
    )
    return breakdown, dg_pos, dg_nl, dg_ni


def total_block_loss(g_pos, g_nl, g_ni, prev_pos, prev_nl, prev_ni,
                     p_nl, p_ni, weights: LossWeights, d: int, depth: int,
                     gamma: float, mgc_enabled: bool = False,
                     mgc_c: float = 1.0, mgc_eps: float = 0.0) -> BlockLossBreakdown:
    """The block objective without its gradients; see block_loss_and_grads."""
    breakdown, _, _, _ = block_loss_and_grads(
        g_pos, g_nl, g_ni, prev_pos, prev_nl, prev_ni, p_nl, p_ni,
        weights, d, depth, gamma, mgc_enabled, mgc_c, mgc_eps)
    return breakdown

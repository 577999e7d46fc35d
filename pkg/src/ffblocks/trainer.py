"""Block-local training loop.

One batch pass trains blocks 0..L-1 in order, each from its own loss and
its own Adam state. Negative streams are built once per batch: a
hard-mined wrong label per example (teacher-scored candidate draws) and a
within-batch derangement pairing each true label with someone else's
image. All cross-block quantities -- input tokens, gamma-mixed running
goodness, prefix margin sums -- enter every block's loss as constants, so
no gradient ever crosses a block boundary; ``locality_audit`` measures
exactly that and a test-only switch un-detaches the token path to prove
the audit can catch a leak.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import DatasetSpec
from .goodness import GateConfig, MarginTrace, effective_gamma
from .losses import LossWeights, block_loss_and_grads
from .model import (BlockGradients, BlockParams, EMATeacher, Network,
                    NumericError, block_forward_cache, ema_update_block,
                    goodness_backward, make_teacher, network_forward,
                    network_loss_gradients)


@dataclass(frozen=True)
class TrainConfig:
    """Everything a run needs; every value is a config key, none hard-coded."""

    # model
    depth: int = 4
    input_dim: int = 32
    hidden_dim: int = 64
    output_dim: int = 32
    goodness_scale: float = 1.0
    embed_scale: float = 0.1
    bias_init: float = 0.1
    label_inject: str = "all"  # all | first
    # objective
    weights: LossWeights = field(default_factory=LossWeights)
    gate: GateConfig = field(default_factory=GateConfig)
    mgc_enabled: bool = False
    mgc_c: float = 1.0
    mgc_eps: float = 0.0
    # negative streams
    hnm_k_first: int = 2
    hnm_k_last: int = 4
    hnm_score: str = "sum"  # sum | mean over blocks
    # optimization
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    ema_decay: float = 0.999
    refresh_tokens: bool = False
    seed: int = 0
    # evaluation and auditing
    eval_with_teacher: bool = False
    locality_audit_every: int = 0  # steps between spot audits; 0 disables
    augment_jitter: float = 0.0
    dataset: DatasetSpec = field(default_factory=DatasetSpec)

    def __post_init__(self):
        if self.hnm_k_first < 1 or self.hnm_k_last < 1:
            raise ValueError("candidate draw counts must be >= 1")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.label_inject not in ("all", "first"):
            raise ValueError(f"label_inject must be 'all' or 'first'")
        if self.hnm_score not in ("sum", "mean"):
            raise ValueError(f"hnm_score must be 'sum' or 'mean'")


@dataclass
class OptimizerState:
    """Adam moments for one block; shapes match that block only."""

    m: list
    v: list
    step: int = 0

    @classmethod
    def for_block(cls, params: BlockParams) -> "OptimizerState":
        return cls(m=[np.zeros_like(a) for a in params.arrays()],
                   v=[np.zeros_like(a) for a in params.arrays()])


@dataclass
class LocalityReport:
    """Max |grad| that each block's loss left on every earlier block."""

    entries: list  # (block, earlier_block, max_abs_grad)
    passed: bool

    def format(self) -> str:
        lines = []
        for block, earlier, value in self.entries:
            flag = "ok" if value == 0.0 else "LEAK"
            lines.append(f"block {block} loss -> block {earlier} params: "
                         f"max |grad| = {value!r} [{flag}]")
        verdict = "PASS" if self.passed else "FAIL"
        lines.append(f"locality audit: {verdict}")
        return "\n".join(lines)


def adam_step(state: OptimizerState, params: BlockParams, grads: BlockGradients,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """Standard bias-corrected Adam update, in place."""
    state.step += 1
    t = state.step
    for m, v, p, g in zip(state.m, state.v, params.arrays(), grads.arrays()):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match {p.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)


def hnm_ramp(epoch: int, total_epochs: int, k_first: int, k_last: int) -> int:
    """Linear candidate-count ramp, rounded to nearest, clamped."""
    if total_epochs < 1:
        raise ValueError(f"total_epochs must be >= 1, got {total_epochs}")
    if total_epochs == 1:
        t = 0.0
    else:
        t = epoch / (total_epochs - 1)
    k = int(round(k_first + t * (k_last - k_first)))
    lo, hi = min(k_first, k_last), max(k_first, k_last)
    return max(lo, min(hi, k))


def draw_wrong_labels(rng: np.random.Generator, true_labels: np.ndarray,
                      class_count: int, k: int) -> np.ndarray:
    """(B, k) labels drawn uniformly with replacement, never the true one."""
    if class_count < 2:
        raise ValueError(f"need at least 2 classes, got {class_count}")
    true_labels = np.asarray(true_labels).reshape(-1)
    r = rng.integers(0, class_count - 1, size=(true_labels.size, k))
    return r + (r >= true_labels[:, None])


def teacher_scores(teacher: EMATeacher, x: np.ndarray, labels: np.ndarray,
                   score: str = "sum", label_inject: str = "all") -> np.ndarray:
    goodness = network_forward(teacher.network, x, labels, label_inject)
    if score == "mean":
        return goodness.mean(axis=0)
    return goodness.sum(axis=0)


def mine_hard_negatives(x: np.ndarray, true_labels: np.ndarray, k: int,
                        teacher: EMATeacher, rng: np.random.Generator,
                        score: str = "sum",
                        label_inject: str = "all") -> np.ndarray:
    """Hardest of k candidate wrong labels per example.

    Candidates are drawn with replacement (duplicates allowed), scored by
    the teacher's block goodness aggregated across depth, and the first
    highest-scoring draw wins ties.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    cand = draw_wrong_labels(rng, true_labels, teacher.network.class_count, k)
    scores = np.empty_like(cand, dtype=np.float64)
    for j in range(k):
        scores[:, j] = teacher_scores(teacher, x, cand[:, j], score, label_inject)
    winner = np.argmax(scores, axis=1)  # first occurrence wins ties
    return cand[np.arange(len(cand)), winner]


def hard_negative_mine(image: np.ndarray, true_label: int, k: int,
                       teacher: EMATeacher, rng: np.random.Generator,
                       score: str = "sum", label_inject: str = "all") -> int:
    """Single-example form of the miner."""
    image = np.asarray(image, dtype=np.float64).reshape(1, -1)
    mined = mine_hard_negatives(image, np.array([true_label]), k, teacher,
                                rng, score, label_inject)
    return int(mined[0])


def derangement(rng: np.random.Generator, n: int) -> np.ndarray:
    """Random permutation with no fixed points (needs n >= 2)."""
    if n < 2:
        raise ValueError(f"derangement needs n >= 2, got {n}")
    perm = rng.permutation(n)
    fixed = np.flatnonzero(perm == np.arange(n))
    if fixed.size == 1:
        j = (fixed[0] + 1) % n
        perm[fixed[0]], perm[j] = perm[j], perm[fixed[0]]
    elif fixed.size > 1:
        perm[fixed] = perm[np.roll(fixed, 1)]
    return perm


def _gate_argument(gate: GateConfig, sum_gpos: float, mixed_gpos: float,
                   prev_gpos: float):
    if gate.cumulative_uses_mixed:
        return mixed_gpos, prev_gpos
    return sum_gpos, prev_gpos


def train_step(net: Network, teacher: EMATeacher, opt_states: list,
               x: np.ndarray, y: np.ndarray, config: TrainConfig, epoch: int,
               rng: np.random.Generator):
    """One batch pass over all blocks, in depth order.

    Returns (per-block BlockLossBreakdown list, MarginTrace). Mutates the
    network, teacher, and optimizer states in place. By default every
    block's forward uses pre-update weights (one forward per batch); with
    ``refresh_tokens`` each block re-emits its tokens after its update so
    deeper blocks consume already-updated features.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y).reshape(-1)
    batch = len(y)
    if batch == 0:
        raise ValueError("empty batch")
    if batch < 2:
        raise ValueError("wrong-image negatives need a batch of >= 2 examples")
    if config.augment_jitter > 0.0:
        x = x + config.augment_jitter * rng.standard_normal(x.shape)

    k = hnm_ramp(epoch, config.epochs, config.hnm_k_first, config.hnm_k_last)
    y_nl = mine_hard_negatives(x, y, k, teacher, rng, config.hnm_score,
                               config.label_inject)
    perm = derangement(rng, batch)

    tokens = {"pos": x, "nl": x, "ni": x[perm]}
    labels = {"pos": y, "nl": y_nl, "ni": y}
    prev_mixed = {name: np.zeros(batch) for name in tokens}
    p_nl = np.zeros(batch)
    p_ni = np.zeros(batch)
    sum_gpos = 0.0
    prev_gpos = 0.0
    mixed_gpos = 0.0

    depth = net.depth
    breakdowns = []
    m_nl_rows, m_ni_rows, gammas = [], [], []
    for d in range(depth):
        block = net.blocks[d]
        inject = d == 0 or config.label_inject == "all"
        caches = {
            name: block_forward_cache(block, tokens[name],
                                      labels[name] if inject else None,
                                      net.goodness_scale)
            for name in tokens
        }
        g = {name: c.goodness for name, c in caches.items()}
        gate_cum, gate_prev = _gate_argument(config.gate, sum_gpos, mixed_gpos,
                                             prev_gpos)
        gamma = effective_gamma(config.gate, gate_cum, gate_prev)

        breakdown, dg_pos, dg_nl, dg_ni = block_loss_and_grads(
            g["pos"], g["nl"], g["ni"],
            prev_mixed["pos"], prev_mixed["nl"], prev_mixed["ni"],
            p_nl, p_ni, config.weights, d, depth, gamma,
            config.mgc_enabled, config.mgc_c, config.mgc_eps)
        if not np.isfinite(breakdown.total):
            raise NumericError(f"non-finite loss at block {d}: {breakdown.total}")
        grads = BlockGradients.zeros_like(block)
        for name, dg in (("pos", dg_pos), ("nl", dg_nl), ("ni", dg_ni)):
            g_part, _ = goodness_backward(block, caches[name], dg)
            grads.add_(g_part)
        adam_step(opt_states[d], block, grads, config.learning_rate,
                  config.adam_beta1, config.adam_beta2, config.adam_eps)
        ema_update_block(teacher.network.blocks[d], block, teacher.decay)

        m_nl = g["pos"] - g["nl"]
        m_ni = g["pos"] - g["ni"]
        breakdowns.append(breakdown)
        m_nl_rows.append(m_nl)
        m_ni_rows.append(m_ni)
        gammas.append(gamma)

        p_nl = p_nl + m_nl
        p_ni = p_ni + m_ni
        for name in tokens:
            prev_mixed[name] = g[name] + gamma * prev_mixed[name]
        sum_gpos += float(g["pos"].mean())
        prev_gpos = float(g["pos"].mean())
        mixed_gpos = float(prev_mixed["pos"].mean())

        if config.refresh_tokens:
            for name in tokens:
                refreshed = block_forward_cache(
                    block, tokens[name], labels[name] if inject else None,
                    net.goodness_scale)
                tokens[name] = refreshed.out
        else:
            for name in tokens:
                tokens[name] = caches[name].out

    trace = MarginTrace.from_margins(np.stack(m_nl_rows), np.stack(m_ni_rows),
                                     np.array(gammas))
    return breakdowns, trace


def locality_audit(net: Network, x: np.ndarray, y: np.ndarray,
                   config: TrainConfig,
                   _bypass_detach: bool = False) -> LocalityReport:
    """Assemble each block's loss gradient over all parameters.

    For every block the report lists the max |grad| found on each earlier
    block; a pass requires exact zeros, not small values. The
    ``_bypass_detach`` switch is a test-only negative control that feeds
    the token path through un-detached, which must make the audit fail.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y).reshape(-1)
    batch = len(y)
    if batch < 2:
        raise ValueError("audit needs a batch of >= 2 examples")
    y_nl = (y + 1) % net.class_count
    perm = np.roll(np.arange(batch), 1)
    streams = {"pos": (x, y), "nl": (x, y_nl), "ni": (x[perm], y)}

    entries = []
    passed = True
    gamma = config.gate.gamma0
    depth = net.depth
    for block_index in range(depth):
        goodness = {name: network_forward(net, tok, lab, config.label_inject)
                    for name, (tok, lab) in streams.items()}
        prev = {name: _mixed_prefix(goodness[name], gamma, block_index)
                for name in streams}
        m_nl = goodness["pos"] - goodness["nl"]
        m_ni = goodness["pos"] - goodness["ni"]
        p_nl = m_nl[:block_index].sum(axis=0) if block_index else np.zeros(batch)
        p_ni = m_ni[:block_index].sum(axis=0) if block_index else np.zeros(batch)

        def loss_fn(g):
            breakdown, dpos, dnl, dni = block_loss_and_grads(
                g["pos"], g["nl"], g["ni"], prev["pos"], prev["nl"], prev["ni"],
                p_nl, p_ni, config.weights, block_index, depth, gamma,
                config.mgc_enabled, config.mgc_c, config.mgc_eps)
            return breakdown.total, {"pos": dpos, "nl": dnl, "ni": dni}

        _, per_block, _ = network_loss_gradients(
            net, streams, block_index, loss_fn, config.label_inject,
            detach_tokens=not _bypass_detach)
        for earlier in range(block_index):
            worst = per_block[earlier].max_abs()
            entries.append((block_index, earlier, worst))
            if worst != 0.0:
                passed = False
    return LocalityReport(entries=entries, passed=passed)


def _mixed_prefix(goodness: np.ndarray, gamma: float, d: int) -> np.ndarray:
    """gamma-mixed running goodness through block d-1."""
    acc = np.zeros(goodness.shape[1])
    for j in range(d):
        acc = goodness[j] + gamma * acc
    return acc


def init_run(config: TrainConfig, class_count: int, input_dim: int):
    """Fresh (network, teacher, optimizer states, rng) for a run."""
    from .model import init_network  # local to avoid cycle at import time

    rng = np.random.default_rng(config.seed)
    net = init_network(rng, input_dim, config.hidden_dim, config.output_dim,
                       class_count, config.depth, config.goodness_scale,
                       config.embed_scale, config.bias_init)
    teacher = make_teacher(net, config.ema_decay)
    opt_states = [OptimizerState.for_block(b) for b in net.blocks]
    return net, teacher, opt_states, rng

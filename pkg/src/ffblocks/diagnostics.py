"""Block-health analytics and dissociation checks.

Everything here consumes immutable goodness tables, margin traces, or
prediction sets and is pure; diagnostics never feed back into training.
Separation metrics evaluate all C-1 wrong labels per example (an exact
max, not the mined subset).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .goodness import attenuation_stats, barrier
from .model import Network, network_forward
from .numerics import Array


@dataclass
class PredictionSet:
    """Cumulative class scores plus the induced predictions.

    Ties break toward the lowest class index (argmax of the stored
    scores), which keeps predictions platform-independent.
    """

    scores: Array  # (N, C)
    pred: Array  # (N,)
    true: Array  # (N,)

    @classmethod
    def from_scores(cls, scores: Array, true: Array) -> "PredictionSet":
        scores = np.asarray(scores, dtype=np.float64)
        true = np.asarray(true, dtype=np.int64).reshape(-1)
        if scores.ndim != 2 or scores.shape[0] != true.size:
            raise ValueError(
                f"scores shape {scores.shape} does not match {true.size} labels")
        return cls(scores=scores, pred=np.argmax(scores, axis=1), true=true)

    @property
    def accuracy(self) -> float:
        return float(np.mean(self.pred == self.true))


@dataclass
class DiagnosticsRecord:
    """Per-epoch block-health summary written to the metrics sink."""

    epoch: int
    train_acc: float
    val_acc: float
    sep_cur_nl: Array  # (L,)
    sep_nl: Array
    lc: Array
    ds: Array
    g_pos_cur: Array
    r_mean: Array
    f_idx: Array
    own_frac: Array

    @property
    def depth(self) -> int:
        return len(self.sep_cur_nl)


@dataclass
class RedistributionReport:
    passed: bool
    max_score_delta: float
    predictions_changed: int
    max_margin_shift_err: float


@dataclass
class StabilityReport:
    passed: bool
    disagreement: float
    acc_a: float
    acc_b: float
    rows: list  # (t, frac margin <= 2t, frac error > t, bound, ok)


@dataclass
class BootstrapReport:
    mean_delta: float
    ci_low: float
    ci_high: float
    disagreement: float
    flips_a_correct_b_wrong: int
    flips_a_wrong_b_correct: int
    resamples: int


def goodness_tables(net: Network, x: Array, label_inject: str = "all") -> Array:
    """(L, N, C) goodness of every example under every label hypothesis."""
    n = len(x)
    tables = np.empty((net.depth, n, net.class_count))
    for label in range(net.class_count):
        tables[:, :, label] = network_forward(net, x, label, label_inject)
    return tables


def pos_and_max_wrong(table_d: Array, true: Array):
    """Split one block's table into true-label and hardest-wrong goodness."""
    n = len(true)
    rows = np.arange(n)
    pos = table_d[rows, true]
    masked = table_d.copy()
    masked[rows, true] = -np.inf
    return pos, masked.max(axis=1)


def sep_cur_nl(table_d: Array, true: Array) -> float:
    """Mean of (true-label goodness - max wrong-label goodness) at one block."""
    if len(true) == 0:
        raise ValueError("empty example set")
    pos, wrong = pos_and_max_wrong(table_d, true)
    return float(np.mean(pos - wrong))


def sep_nl(tables: Array, true: Array, d: int) -> float:
    """Same separation on plain prefix-summed goodness through block d."""
    prefix = tables[:d + 1].sum(axis=0)
    return sep_cur_nl(prefix, true)


def depth_saturation(pred_sets_by_prefix: list) -> Array:
    """DS(d) = accuracy(prefix d) / accuracy(full); nan if full acc is 0."""
    accs = np.array([p.accuracy for p in pred_sets_by_prefix])
    full = accs[-1]
    if full == 0.0:
        return np.full(len(accs), np.nan)
    return accs / full


def loss_collapse(margins: Array, beta: float) -> Array:
    """Mean barrier of the prefix-summed inference margin, per block.

    ``margins`` holds current-block margins with shape (L, K) over any
    pool of (example, negative) pairs; the prefix sum here is the plain
    inference margin, not the gamma-mixed loss margin.
    """
    margins = np.asarray(margins, dtype=np.float64)
    prefix = np.cumsum(margins, axis=0)
    return barrier(prefix, beta).mean(axis=1)


def own_vs_inherited(g_pos_cur: Array, gamma: float) -> Array:
    """Own-block share of the gamma-mixed cumulative positive goodness.

    fraction(d) = mean g+_cur(d) / mean G_mixed(d); nan where the
    denominator is zero.
    """
    g_pos_cur = np.asarray(g_pos_cur, dtype=np.float64)
    depth = g_pos_cur.shape[0]
    out = np.empty(depth)
    mixed = np.zeros(g_pos_cur.shape[1])
    for d in range(depth):
        mixed = g_pos_cur[d] + gamma * mixed
        denom = mixed.mean()
        out[d] = g_pos_cur[d].mean() / denom if denom != 0.0 else np.nan
    return out


def redistribution_check(tables: Array, true: Array, depth_a: int, depth_b: int,
                         q: Array, tol: float = 1e-12) -> RedistributionReport:
    """Zero-sum goodness transfer between two depths must not move scores.

    Adds q(x, y) at depth_a and subtracts it at depth_b, then asserts the
    cumulative class scores (to ``tol``) and the argmax predictions
    (exactly) are unchanged, while per-block separation margins shift by
    exactly the predicted q(x, y) - q(x, y') difference.
    """
    if depth_a == depth_b:
        raise ValueError("redistribution needs two distinct depths")
    tables = np.asarray(tables, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if q.shape != tables.shape[1:]:
        raise ValueError(f"q shape {q.shape} does not match table {tables.shape[1:]}")
    perturbed = tables.copy()
    perturbed[depth_a] += q
    perturbed[depth_b] -= q

    before = PredictionSet.from_scores(tables.sum(axis=0), true)
    after = PredictionSet.from_scores(perturbed.sum(axis=0), true)
    max_delta = float(np.max(np.abs(after.scores - before.scores)))
    changed = int(np.sum(after.pred != before.pred))

    # Per-block wrong-label margins shift by q(x, y) - q(x, y') at depth_a.
    n = len(true)
    rows = np.arange(n)
    shift = q[rows, true][:, None] - q
    got = ((perturbed[depth_a][rows, true][:, None] - perturbed[depth_a])
           - (tables[depth_a][rows, true][:, None] - tables[depth_a]))
    margin_err = float(np.max(np.abs(got - shift)))

    return RedistributionReport(
        passed=(max_delta <= tol and changed == 0 and margin_err <= tol),
        max_score_delta=max_delta,
        predictions_changed=changed,
        max_margin_shift_err=margin_err,
    )


def _top_two_margin(scores: Array) -> Array:
    part = np.partition(scores, -2, axis=1)
    return part[:, -1] - part[:, -2]


def stability_bound_check(pred_a: PredictionSet, pred_b: PredictionSet,
                          t_grid: Array) -> StabilityReport:
    """Disagreement union bound over a grid of slack thresholds.

    For every t: count(disagree) <= count(margin_A <= 2t) + count(E > t),
    compared in integer counts, plus |Acc(A) - Acc(B)| bounded by the
    disagreement rate. Both inequalities hold pointwise, so a violation
    at any t indicates an implementation bug, not noise.
    """
    if pred_a.scores.shape != pred_b.scores.shape or np.any(pred_a.true != pred_b.true):
        raise ValueError("prediction sets must cover the same examples")
    n = len(pred_a.true)
    margin_a = _top_two_margin(pred_a.scores)
    err = np.max(np.abs(pred_a.scores - pred_b.scores), axis=1)
    disagree = int(np.sum(pred_a.pred != pred_b.pred))

    rows = []
    passed = True
    for t in np.asarray(t_grid, dtype=np.float64):
        in_band = int(np.sum(margin_a <= 2.0 * t))
        in_tail = int(np.sum(err > t))
        ok = disagree <= in_band + in_tail
        passed = passed and ok
        rows.append((float(t), in_band / n, in_tail / n,
                     (in_band + in_tail) / n, ok))
    acc_gap_ok = abs(int(np.sum(pred_a.pred == pred_a.true))
                     - int(np.sum(pred_b.pred == pred_b.true))) <= disagree
    passed = passed and acc_gap_ok
    return StabilityReport(passed=passed, disagreement=disagree / n,
                           acc_a=pred_a.accuracy, acc_b=pred_b.accuracy,
                           rows=rows)


def paired_bootstrap(pred_a: PredictionSet, pred_b: PredictionSet,
                     resamples: int = 5000,
                     rng: np.random.Generator | None = None,
                     chunk: int = 500) -> BootstrapReport:
    """Percentile CI on the accuracy difference from per-example deltas.

    delta_i = correct_A(i) - correct_B(i) in {-1, 0, +1}; examples are
    resampled with replacement and the CI is the empirical 2.5/97.5
    percentile of the resampled means.
    """
    if resamples < 1:
        raise ValueError(f"resamples must be >= 1, got {resamples}")
    if len(pred_a.true) != len(pred_b.true) or np.any(pred_a.true != pred_b.true):
        raise ValueError("prediction sets must cover the same examples")
    if rng is None:
        rng = np.random.default_rng(0)
    correct_a = pred_a.pred == pred_a.true
    correct_b = pred_b.pred == pred_b.true
    delta = correct_a.astype(np.float64) - correct_b.astype(np.float64)
    n = delta.size

    means = np.empty(resamples)
    done = 0
    while done < resamples:
        take = min(chunk, resamples - done)
        idx = rng.integers(0, n, size=(take, n))
        means[done:done + take] = delta[idx].mean(axis=1)
        done += take
    lo, hi = np.percentile(means, [2.5, 97.5])
    return BootstrapReport(
        mean_delta=float(delta.mean()),
        ci_low=float(lo),
        ci_high=float(hi),
        disagreement=float(np.mean(pred_a.pred != pred_b.pred)),
        flips_a_correct_b_wrong=int(np.sum(correct_a & ~correct_b)),
        flips_a_wrong_b_correct=int(np.sum(~correct_a & correct_b)),
        resamples=resamples,
    )


def eval_margin_streams(tables: Array, true: Array,
                        perm: Array | None = None):
    """Evaluation-time margin pools for the two negative streams.

    Wrong-label margins take the hardest wrong label per example and
    block (exact max); wrong-image margins pair each true label with a
    deranged partner's image via the tables. Returns (m_nl, m_ni) with
    shape (L, N).
    """
    depth, n, _ = tables.shape
    rows = np.arange(n)
    if perm is None:
        perm = np.roll(rows, 1)
    pos = tables[:, rows, true]
    masked = tables.copy()
    masked[:, rows, true] = -np.inf
    m_nl = pos - masked.max(axis=2)
    m_ni = pos - tables[:, perm, true]
    return m_nl, m_ni


def lc_profile(tables: Array, true: Array, beta: float,
               perm: Array | None = None) -> Array:
    """End-of-training loss collapse per block.

    Averages the barrier of the prefix-summed inference margin over all
    wrong labels (wrong-label stream) and over one derangement pairing
    (wrong-image stream), weighting the two streams equally.
    """
    depth, n, c = tables.shape
    rows = np.arange(n)
    if perm is None:
        perm = np.roll(rows, 1)
    pos = tables[:, rows, true]  # (L, N)
    # All wrong labels at once: margins (L, N, C) with the true column dropped.
    margins_all = pos[:, :, None] - tables
    mask = np.ones((n, c), dtype=bool)
    mask[rows, true] = False
    m_nl = margins_all[:, mask].reshape(depth, -1)  # (L, N*(C-1))
    m_ni = pos - tables[:, perm, true]
    lc_nl = loss_collapse(m_nl, beta)
    lc_ni = loss_collapse(m_ni, beta)
    return 0.5 * (lc_nl + lc_ni)


def prefix_prediction_sets(tables: Array, true: Array) -> list:
    prefix = np.cumsum(tables, axis=0)
    return [PredictionSet.from_scores(prefix[d], true)
            for d in range(tables.shape[0])]


def predict(net: Network, x: Array, true: Array,
            label_inject: str = "all") -> PredictionSet:
    """Cumulative-score predictions: S_y = sum over blocks of g(x, y)."""
    tables = goodness_tables(net, x, label_inject)
    return PredictionSet.from_scores(tables.sum(axis=0), true)


def compute_record(net: Network, x: Array, true: Array, *, beta: float,
                   gamma: float, epoch: int, train_acc: float,
                   trace_stats: list | None = None,
                   label_inject: str = "all") -> DiagnosticsRecord:
    """Full per-epoch record from an evaluation split.

    ``trace_stats`` carries per-block AttenuationStats pooled from the
    epoch's training margin traces; when absent (pure post-hoc
    diagnosis), attenuation is measured on evaluation-time margins with
    the configured gamma.
    """
    tables = goodness_tables(net, x, label_inject)
    depth, n, _ = tables.shape
    rows = np.arange(n)
    pred_sets = prefix_prediction_sets(tables, true)
    ds = depth_saturation(pred_sets)
    g_pos_cur = tables[:, rows, true]

    if trace_stats is None:
        m_nl, m_ni = eval_margin_streams(tables, true)
        trace_stats = []
        for d in range(depth):
            m_pool = np.concatenate([m_nl[d], m_ni[d]])
            p_pool = np.concatenate([
                m_nl[:d].sum(axis=0) if d else np.zeros(n),
                m_ni[:d].sum(axis=0) if d else np.zeros(n)])
            trace_stats.append(attenuation_stats(m_pool, p_pool, gamma, beta))

    return DiagnosticsRecord(
        epoch=epoch,
        train_acc=train_acc,
        val_acc=pred_sets[-1].accuracy,
        sep_cur_nl=np.array([sep_cur_nl(tables[d], true) for d in range(depth)]),
        sep_nl=np.array([sep_nl(tables, true, d) for d in range(depth)]),
        lc=lc_profile(tables, true, beta),
        ds=ds,
        g_pos_cur=g_pos_cur.mean(axis=1),
        r_mean=np.array([s.mean_ratio for s in trace_stats]),
        f_idx=np.array([s.free_riding for s in trace_stats]),
        own_frac=own_vs_inherited(g_pos_cur, gamma),
    )

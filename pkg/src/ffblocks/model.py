"""Label-conditioned dense blocks with hand-derived gradients.

A block adds a learned label embedding to its input tokens, applies
affine -> relu, reads a scalar energy goodness off the hidden layer
(mean squared activation minus a constant centering scale), and emits
L2-row-normalized tokens through a second affine map for the next block.
Blocks exchange tokens as constants; each block's loss reaches only its
own parameters, and the reverse-mode chain here is written for exactly
this block family so gradients are exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .numerics import Array, affine_forward, l2_normalize_rows, relu

PARAM_FIELDS = ("w1", "b1", "w2", "b2", "label_embed")

CHECKPOINT_MAGIC = b"FFCK"
CHECKPOINT_VERSION = 1

NORM_EPS = 1e-12


class NumericError(RuntimeError):
    """A loss or gradient came out non-finite."""


@dataclass
class BlockParams:
    """One block's learnable parameters.

    w1: (in_dim, hidden); b1: (hidden,); w2: (hidden, out_dim);
    b2: (out_dim,); label_embed: (C, in_dim).
    """

    w1: Array
    b1: Array
    w2: Array
    b2: Array
    label_embed: Array

    def arrays(self):
        return [getattr(self, name) for name in PARAM_FIELDS]

    def copy(self) -> "BlockParams":
        return BlockParams(*(a.copy() for a in self.arrays()))


@dataclass
class BlockGradients:
    """Gradient of one block's loss w.r.t. that block's parameters only."""

    w1: Array
    b1: Array
    w2: Array
    b2: Array
    label_embed: Array

    def arrays(self):
        return [getattr(self, name) for name in PARAM_FIELDS]

    @classmethod
    def zeros_like(cls, params: BlockParams) -> "BlockGradients":
        return cls(*(np.zeros_like(a) for a in params.arrays()))

    def add_(self, other: "BlockGradients"):
        for mine, theirs in zip(self.arrays(), other.arrays()):
            mine += theirs
        return self

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(a))) if a.size else 0.0 for a in self.arrays())


@dataclass
class Network:
    """Ordered blocks; block d consumes block d-1's normalized output."""

    blocks: list
    input_dim: int
    hidden_dim: int
    output_dim: int
    class_count: int
    goodness_scale: float = 1.0

    @property
    def depth(self) -> int:
        return len(self.blocks)

    def copy(self) -> "Network":
        return Network(
            blocks=[b.copy() for b in self.blocks],
            input_dim=self.input_dim,
            hidden_dim=self.hidden_dim,
            output_dim=self.output_dim,
            class_count=self.class_count,
            goodness_scale=self.goodness_scale,
        )


@dataclass
class EMATeacher:
    """Exponentially averaged shadow of a network."""

    network: Network
    decay: float

    def __post_init__(self):
        if not 0.0 <= self.decay <= 1.0:
            raise ValueError(f"decay must lie in [0, 1], got {self.decay}")


@dataclass
class BlockCache:
    """Forward intermediates needed by the backward pass."""

    tokens: Array
    labels: Array | None
    z: Array
    pre: Array
    hidden: Array
    out_raw: Array
    out: Array
    goodness: Array


def init_network(rng: np.random.Generator, input_dim: int, hidden_dim: int,
                 output_dim: int, class_count: int, depth: int,
                 goodness_scale: float = 1.0, embed_scale: float = 0.1,
                 bias_init: float = 0.1) -> Network:
    """He-style init for the hidden map, small random label embeddings.

    ``bias_init`` starts hidden units slightly positive so the relu gate
    cannot silence a whole block before training touches it.
    """
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    blocks = []
    for d in range(depth):
        in_dim = input_dim if d == 0 else output_dim
        blocks.append(BlockParams(
            w1=rng.standard_normal((in_dim, hidden_dim)) * np.sqrt(2.0 / in_dim),
            b1=np.full(hidden_dim, float(bias_init)),
            w2=rng.standard_normal((hidden_dim, output_dim)) * np.sqrt(1.0 / hidden_dim),
            b2=np.zeros(output_dim),
            label_embed=rng.standard_normal((class_count, in_dim)) * embed_scale,
        ))
    return Network(blocks, input_dim, hidden_dim, output_dim, class_count,
                   goodness_scale)


def _label_rows(params: BlockParams, labels, batch: int) -> Array | None:
    if labels is None:
        return None
    labels = np.asarray(labels)
    if labels.ndim == 0:
        labels = np.full(batch, int(labels))
    if labels.shape != (batch,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {batch}")
    c = params.label_embed.shape[0]
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"label out of range [0, {c})")
    return labels


def block_forward_cache(params: BlockParams, tokens: Array, labels,
                        goodness_scale: float) -> BlockCache:
    tokens = np.asarray(tokens, dtype=np.float64)
    labels = _label_rows(params, labels, tokens.shape[0])
    z = tokens if labels is None else tokens + params.label_embed[labels]
    pre = affine_forward(z, params.w1, params.b1)
    hidden = relu(pre)
    goodness = np.mean(hidden * hidden, axis=1) - goodness_scale
    out_raw = affine_forward(hidden, params.w2, params.b2)
    out = l2_normalize_rows(out_raw, NORM_EPS)
    return BlockCache(tokens, labels, z, pre, hidden, out_raw, out, goodness)


def block_forward(params: BlockParams, tokens: Array, labels,
                  goodness_scale: float = 1.0):
    """(hidden, normalized output, goodness) for one block.

    ``labels`` is a class index, a per-example index array, or None to
    skip label injection.
    """
    cache = block_forward_cache(params, tokens, labels, goodness_scale)
    return cache.hidden, cache.out, cache.goodness


def network_forward(net: Network, tokens: Array, labels,
                    label_inject: str = "all") -> Array:
    """Per-block goodness, shape (L, B).

    Block d consumes block d-1's normalized output as a constant; with
    ``label_inject="first"`` only block 0 sees the label.
    """
    goodness, _, _ = network_forward_cached(net, tokens, labels, label_inject)
    return goodness


def network_forward_cached(net: Network, tokens: Array, labels,
                           label_inject: str = "all"):
    """(goodness (L, B), caches per block, final tokens)."""
    if label_inject not in ("all", "first"):
        raise ValueError(f"label_inject must be 'all' or 'first', got {label_inject!r}")
    caches = []
    goodness = []
    current = np.asarray(tokens, dtype=np.float64)
    for d, params in enumerate(net.blocks):
        block_labels = labels if (d == 0 or label_inject == "all") else None
        cache = block_forward_cache(params, current, block_labels, net.goodness_scale)
        caches.append(cache)
        goodness.append(cache.goodness)
        current = cache.out
    return np.stack(goodness, axis=0), caches, current


def goodness_backward(params: BlockParams, cache: BlockCache, dgoodness: Array):
    """Backprop d(loss)/d(goodness) through energy -> relu -> affine.

    Returns (BlockGradients, dtokens). w2/b2 receive exact zeros: the
    output path feeds the next block only, which detaches its input, so
    no within-block loss reaches them. dtokens is the gradient on the
    block's input tokens, used solely by the leakage audit.
    """
    dgoodness = np.asarray(dgoodness, dtype=np.float64).reshape(-1)
    hidden_dim = cache.hidden.shape[1]
    dh = (2.0 / hidden_dim) * cache.hidden * dgoodness[:, None]
    dpre = dh * (cache.pre > 0.0)
    dw1 = cache.z.T @ dpre
    db1 = dpre.sum(axis=0)
    dz = dpre @ params.w1.T
    dembed = np.zeros_like(params.label_embed)
    if cache.labels is not None:
        np.add.at(dembed, cache.labels, dz)
    grads = BlockGradients(
        w1=dw1, b1=db1,
        w2=np.zeros_like(params.w2), b2=np.zeros_like(params.b2),
        label_embed=dembed,
    )
    return grads, dz


def output_backward(params: BlockParams, cache: BlockCache, dout: Array):
    """Backprop a gradient on the normalized output tokens.

    Only the leakage audit's no-detach mode uses this path; normal
    training never sends gradient across the block boundary.
    """
    raw = cache.out_raw
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    safe = norms >= NORM_EPS
    scale = np.where(safe, norms, NORM_EPS)
    y = cache.out
    inner = np.sum(y * dout, axis=1, keepdims=True)
    draw = np.where(safe, (dout - y * inner) / scale, dout / NORM_EPS)
    dw2 = cache.hidden.T @ draw
    db2 = draw.sum(axis=0)
    dh = draw @ params.w2.T
    dpre = dh * (cache.pre > 0.0)
    dw1 = cache.z.T @ dpre
    db1 = dpre.sum(axis=0)
    dz = dpre @ params.w1.T
    dembed = np.zeros_like(params.label_embed)
    if cache.labels is not None:
        np.add.at(dembed, cache.labels, dz)
    grads = BlockGradients(w1=dw1, b1=db1, w2=dw2, b2=db2, label_embed=dembed)
    return grads, dz


def block_gradients(params: BlockParams, streams: dict, loss_fn,
                    goodness_scale: float = 1.0):
    """Exact gradient of a goodness-level loss w.r.t. one block's params.

    ``streams`` maps a stream name to (tokens, labels); ``loss_fn`` maps
    {name: goodness vector} to (scalar loss, {name: d loss / d goodness}).
    Inputs are treated as constants (detached). Returns
    (loss, BlockGradients).
    """
    caches = {name: block_forward_cache(params, tokens, labels, goodness_scale)
              for name, (tokens, labels) in streams.items()}
    loss, dgs = loss_fn({name: c.goodness for name, c in caches.items()})
    if not np.isfinite(loss):
        raise NumericError(f"non-finite block loss: {loss}")
    total = BlockGradients.zeros_like(params)
    for name, cache in caches.items():
        grads, _ = goodness_backward(params, cache, dgs[name])
        total.add_(grads)
    return float(loss), total


def network_loss_gradients(net: Network, streams: dict, block_index: int,
                           loss_fn, label_inject: str = "all",
                           detach_tokens: bool = True):
    """Gradient of block ``block_index``'s loss on every network parameter.

    With ``detach_tokens=True`` (the training rule) the chain stops at the
    block's input and all earlier blocks receive exact zeros. Setting it
    False deliberately bypasses the token detachment and lets the chain
    run through earlier blocks' output/normalization path; the locality
    audit uses that as its negative control.

    Returns (loss, [BlockGradients per block], goodness dict at the block).
    """
    forwards = {name: network_forward_cached(net, tokens, labels, label_inject)
                for name, (tokens, labels) in streams.items()}
    goodness_at_block = {name: caches[block_index].goodness
                         for name, (_, caches, _) in forwards.items()}
    loss, dgs = loss_fn(goodness_at_block)
    per_block = [BlockGradients.zeros_like(b) for b in net.blocks]
    for name, (_, caches, _) in forwards.items():
        grads, dtokens = goodness_backward(net.blocks[block_index],
                                           caches[block_index], dgs[name])
        per_block[block_index].add_(grads)
        if not detach_tokens:
            for j in range(block_index - 1, -1, -1):
                grads_j, dtokens = output_backward(net.blocks[j], caches[j], dtokens)
                per_block[j].add_(grads_j)
    return float(loss), per_block, goodness_at_block


def ema_update(teacher: EMATeacher, live: Network) -> EMATeacher:
    """shadow <- decay * shadow + (1 - decay) * live, every parameter."""
    for shadow, block in zip(teacher.network.blocks, live.blocks):
        ema_update_block(shadow, block, teacher.decay)
    return teacher


def ema_update_block(shadow: BlockParams, live: BlockParams, decay: float):
    for s, p in zip(shadow.arrays(), live.arrays()):
        if s.shape != p.shape:
            raise ValueError(f"teacher shape {s.shape} does not match live {p.shape}")
        s *= decay
        s += (1.0 - decay) * p


def make_teacher(net: Network, decay: float) -> EMATeacher:
    return EMATeacher(network=net.copy(), decay=decay)


def flatten_params(params: BlockParams) -> Array:
    return np.concatenate([a.ravel() for a in params.arrays()])


def unflatten_params(params: BlockParams, vec: Array) -> BlockParams:
    """New BlockParams with the same shapes, filled from a flat vector."""
    out = []
    offset = 0
    for a in params.arrays():
        out.append(vec[offset:offset + a.size].reshape(a.shape).copy())
        offset += a.size
    if offset != vec.size:
        raise ValueError(f"flat vector size {vec.size}, expected {offset}")
    return BlockParams(*out)


def flatten_gradients(grads: BlockGradients) -> Array:
    return np.concatenate([a.ravel() for a in grads.arrays()])


def save_checkpoint(net: Network, path: str) -> None:
    """Write the checkpoint container; load(save(x)) is bitwise x.

    Layout: magic "FFCK", then little-endian u32 fields (version, L,
    input_dim, hidden_dim, output_dim, class_count), one f64
    goodness_scale, then for each block in order the raw float64 bytes of
    w1, b1, w2, b2, label_embed.
    """
    header = CHECKPOINT_MAGIC + struct.pack(
        "<6I", CHECKPOINT_VERSION, net.depth, net.input_dim, net.hidden_dim,
        net.output_dim, net.class_count) + struct.pack("<d", net.goodness_scale)
    with open(path, "wb") as fh:
        fh.write(header)
        for block in net.blocks:
            for a in block.arrays():
                fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path: str) -> Network:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"not a checkpoint file: bad magic {blob[:4]!r}")
    version, depth, input_dim, hidden_dim, output_dim, class_count = struct.unpack(
        "<6I", blob[4:28])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    (goodness_scale,) = struct.unpack("<d", blob[28:36])
    offset = 36
    blocks = []
    for d in range(depth):
        in_dim = input_dim if d == 0 else output_dim
        shapes = [(in_dim, hidden_dim), (hidden_dim,), (hidden_dim, output_dim),
                  (output_dim,), (class_count, in_dim)]
        arrays = []
        for shape in shapes:
            count = int(np.prod(shape))
            raw = blob[offset:offset + 8 * count]
            if len(raw) != 8 * count:
                raise ValueError("checkpoint truncated")
            arrays.append(np.frombuffer(raw, dtype="<f8").reshape(shape).copy())
            offset += 8 * count
        blocks.append(BlockParams(*arrays))
    if offset != len(blob):
        raise ValueError("checkpoint has trailing bytes")
    return Network(blocks, input_dim, hidden_dim, output_dim, class_count,
                   goodness_scale)

"""Embeddings, block stack, and task heads for recall and ranking.

Sequences may be interleaved: ranking always alternates item / label
tokens, and recall can optionally alternate item / behavior tokens.
Interleaved companions share their item's timestamp and pad status.
Prediction slots sit at item positions for ranking (the state at item x_k
predicts label b'_k) and at the companion positions for recall-with-
behavior-tokens (the state after seeing x_k and b_k predicts x_{k+1}).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from . import blocks as B
from .data import PAD, UserSequence
from .tensor import (
    Tensor,
    bce_with_logits,
    concat_last,
    gather,
    matmul,
    silu,
    softmax_cross_entropy,
)

HEADS = ("dot", "mlp", "ffn")
TASKS = ("recall", "ranking")


class ModelError(ValueError):
    pass


@dataclass
class ModelConfig:
    vocab: int                      # number of real items (ids 1..vocab, 0 = pad)
    dim: int = 32
    blocks: int = 2
    max_len: int = 50
    task: str = "recall"
    head: str = "dot"
    tie_output: bool = True
    side_info: bool = False
    behavior_tokens: bool = False
    behavior_vocab: int = 0
    side_attr_vocabs: tuple[int, ...] = ()
    block: B.BlockConfig = field(default_factory=B.BlockConfig)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ModelError(f"unknown task {self.task!r}")
        if self.head not in HEADS:
            raise ModelError(f"unknown head {self.head!r}")
        if self.vocab < 1:
            raise ModelError("need at least one item")
        if self.behavior_tokens and self.behavior_vocab < 1:
            raise ModelError("behavior_tokens requires behavior_vocab >= 1")
        if self.side_info and not self.side_attr_vocabs:
            raise ModelError("side_info requires side_attr_vocabs")
        # the block sees the interleaved length and must share dim
        self.block = dataclasses.replace(
            self.block, dim=self.dim, max_len=self.seq_len)

    @property
    def interleaved(self):
        return self.task == "ranking" or self.behavior_tokens

    @property
    def seq_len(self):
        return 2 * self.max_len if self.interleaved else self.max_len

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["side_attr_vocabs"] = list(self.side_attr_vocabs)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["side_attr_vocabs"] = tuple(d.get("side_attr_vocabs", ()))
        d["block"] = B.BlockConfig(**d["block"])
        return cls(**d)


@dataclass
class EmbeddingTables:
    item: Tensor                      # (V+1, d), row 0 = pad, frozen at zero
    out_item: Tensor | None           # None when tie_output
    behavior: Tensor | None           # (B+1, d)
    attrs: list[Tensor]               # one (size+1, d) table per side attribute
    label: Tensor | None              # (2, d) ranking label tokens


@dataclass
class ScoringHead:
    kind: str
    w1: Tensor | None = None
    b1: Tensor | None = None
    w2: Tensor | None = None
    b2: Tensor | None = None


class RecModel:
    def __init__(self, cfg: ModelConfig, tables: EmbeddingTables,
                 block_params, final_ln, head: ScoringHead):
        self.cfg = cfg
        self.tables = tables
        self.block_params = block_params   # list of BlockParams
        self.final_ln = final_ln           # (gamma, beta) or None
        self.head = head

    # -- parameter plumbing --------------------------------------------------

    def parameters(self):
        """Deterministically ordered (name, tensor) pairs."""
        out = [("emb.item", self.tables.item)]
        if self.tables.out_item is not None:
            out.append(("emb.out_item", self.tables.out_item))
        if self.tables.behavior is not None:
            out.append(("emb.behavior", self.tables.behavior))
        for i, t in enumerate(self.tables.attrs):
            out.append((f"emb.attr{i}", t))
        if self.tables.label is not None:
            out.append(("emb.label", self.tables.label))
        for i, bp in enumerate(self.block_params):
            out.extend(bp.named_tensors(prefix=f"block{i}."))
        if self.final_ln is not None:
            out.append(("final_ln.gamma", self.final_ln[0]))
            out.append(("final_ln.beta", self.final_ln[1]))
        for name in ("w1", "b1", "w2", "b2"):
            t = getattr(self.head, name)
            if t is not None:
                out.append((f"head.{name}", t))
        return out

    def zero_grads(self):
        for _, t in self.parameters():
            t.grad = None

    def enforce_pad_rows(self):
        """Pad rows stay exactly zero through training."""
        self.tables.item.data[0] = 0.0
        if self.tables.out_item is not None:
            self.tables.out_item.data[0] = 0.0
        if self.tables.behavior is not None:
            self.tables.behavior.data[0] = 0.0
        for t in self.tables.attrs:
            t.data[0] = 0.0

    def param_count(self):
        return sum(t.data.size for _, t in self.parameters())

    @property
    def stack(self):
        return [(bp, self.cfg.block) for bp in self.block_params]

    def output_table(self):
        return self.tables.item if self.cfg.tie_output else self.tables.out_item


def init_model(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> RecModel:
    rng = np.random.default_rng(seed)
    d = cfg.dim

    def emb(rows):
        w = B.trunc_normal(rng, (rows, d), dtype=dtype)
        w[0] = 0.0
        return Tensor(w, requires_grad=True)

    item = emb(cfg.vocab + 1)
    out_item = None if cfg.tie_output else emb(cfg.vocab + 1)
    behavior = emb(cfg.behavior_vocab + 1) if cfg.behavior_tokens else None
    attrs = [emb(size + 1) for size in cfg.side_attr_vocabs] if cfg.side_info else []
    label = None
    if cfg.task == "ranking":
        label = Tensor(B.trunc_normal(rng, (2, d), dtype=dtype), requires_grad=True)

    block_params = [B.init_block_params(cfg.block, rng, dtype=dtype) for _ in range(cfg.blocks)]
    final_ln = None
    if cfg.block.residual in ("hstu", "llama"):
        final_ln = (Tensor(np.ones(d, dtype=dtype), requires_grad=True),
                    Tensor(np.zeros(d, dtype=dtype), requires_grad=True))

    head = ScoringHead(kind=cfg.head)
    if cfg.head == "mlp":
        head.w1 = Tensor(B.trunc_normal(rng, (2 * d, d), dtype=dtype), requires_grad=True)
        head.b1 = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)
        head.w2 = Tensor(B.trunc_normal(rng, (d, 1), dtype=dtype), requires_grad=True)
        head.b2 = Tensor(np.zeros(1, dtype=dtype), requires_grad=True)
    elif cfg.head == "ffn":
        head.w1 = Tensor(B.trunc_normal(rng, (d, 4 * d), dtype=dtype), requires_grad=True)
        head.b1 = Tensor(np.zeros(4 * d, dtype=dtype), requires_grad=True)
        head.w2 = Tensor(B.trunc_normal(rng, (4 * d, d), dtype=dtype), requires_grad=True)
        head.b2 = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)
    return RecModel(cfg, EmbeddingTables(item, out_item, behavior, attrs, label),
                    block_params, final_ln, head)


# -- embedding ---------------------------------------------------------------

def _fuse_side_info(item_emb: Tensor, attrs_ids, tables: EmbeddingTables, dtype):
    """Mean of {item row} U {attribute rows present}; absent ids contribute
    nothing. Pad positions stay exactly zero (item row 0 and attr row 0 are
    zero and count >= 1)."""
    acc = item_emb
    count = np.ones(attrs_ids.shape[:-1], dtype=dtype)
    for k, table in enumerate(tables.attrs):
        ids = attrs_ids[..., k]
        present = (ids != 0).astype(dtype)
        acc = acc + gather(table, ids) * present[..., None]
        count = count + present
    return acc * (1.0 / count)[..., None]


def _interleave_rows(a: Tensor, b: Tensor) -> Tensor:
    """(..., n, d), (..., n, d) -> (..., 2n, d) alternating a_k, b_k."""
    lead = a.shape[:-2]
    n, d = a.shape[-2], a.shape[-1]
    return concat_last([a, b]).reshape(lead + (2 * n, d))


def interleave_arrays(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.stack([a, b], axis=-1)
    return out.reshape(a.shape[:-1] + (2 * a.shape[-1],))


def embed_batch(model: RecModel, items, behaviors=None, labels=None, attrs=None):
    """Token embeddings for a batch, plus interleaved timestamps/pad masks.

    Returns (emb (B, n', d), slot description handled by callers).
    """
    cfg = model.cfg
    items = np.asarray(items)
    dtype = np.dtype(model.tables.item.dtype).type
    base = gather(model.tables.item, items)
    if cfg.side_info:
        if attrs is None:
            raise ModelError("side_info model needs per-position attribute ids")
        base = _fuse_side_info(base, np.asarray(attrs), model.tables, dtype)
    if cfg.task == "ranking":
        if labels is None:
            raise ModelError("ranking model needs per-position labels")
        lab = gather(model.tables.label, np.asarray(labels))
        lab = lab * (items != PAD).astype(dtype)[..., None]
        return _interleave_rows(base, lab)
    if cfg.behavior_tokens:
        if behaviors is None:
            raise ModelError("behavior_tokens model needs per-position behavior ids")
        beh = gather(model.tables.behavior, np.asarray(behaviors))
        return _interleave_rows(base, beh)
    return base


def embed_sequence(seq: UserSequence, model: RecModel) -> Tensor:
    """Single-sequence embedding, shape (n', d)."""
    emb = embed_batch(model, seq.items[None, :],
                      behaviors=None if seq.behaviors is None else seq.behaviors[None, :],
                      labels=None if seq.labels is None else seq.labels[None, :],
                      attrs=None if seq.attrs is None else seq.attrs[None, :])
    return emb.reshape(emb.shape[1:])


def _expand_channels(cfg: ModelConfig, items, timestamps):
    """Timestamps and pad mask for the (possibly interleaved) sequence."""
    keep = np.asarray(items) != PAD
    ts = np.asarray(timestamps)
    if cfg.interleaved:
        keep = interleave_arrays(keep, keep)
        ts = interleave_arrays(ts, ts)
    return ts, keep


def forward_hidden(model: RecModel, items, timestamps, behaviors=None,
                   labels=None, attrs=None) -> Tensor:
    emb = embed_batch(model, items, behaviors=behaviors, labels=labels, attrs=attrs)
    ts, keep = _expand_channels(model.cfg, items, timestamps)
    return B.stack_forward(emb, model.stack, timestamps=ts, pad_keep=keep,
                           final_ln=model.final_ln)


# -- recall ------------------------------------------------------------------

def forward_recall(model: RecModel, seqs) -> np.ndarray:
    """Scores over the full catalog at the next step, shape (B, V+1).

    Column 0 is the pad item and is never a valid prediction.
    """
    seqs = list(seqs)
    if not seqs:
        raise ModelError("empty batch")
    for s in seqs:
        if s.length == 0:
            raise ModelError(f"user {s.user_id}: all-pad sequence has no read position")
    items = np.stack([s.items for s in seqs])
    ts = np.stack([s.timestamps for s in seqs])
    behaviors = np.stack([s.behaviors for s in seqs]) if model.cfg.behavior_tokens else None
    attrs = np.stack([s.attrs for s in seqs]) if model.cfg.side_info else None
    hidden = forward_hidden(model, items, ts, behaviors=behaviors, attrs=attrs)
    state = hidden.data[:, -1, :]  # left-padded: last position is the newest event
    return state @ model.output_table().data.T


def final_states(model: RecModel, seqs) -> np.ndarray:
    """Final hidden state per user (the recall read position)."""
    seqs = list(seqs)
    items = np.stack([s.items for s in seqs])
    ts = np.stack([s.timestamps for s in seqs])
    behaviors = np.stack([s.behaviors for s in seqs]) if model.cfg.behavior_tokens else None
    attrs = np.stack([s.attrs for s in seqs]) if model.cfg.side_info else None
    hidden = forward_hidden(model, items, ts, behaviors=behaviors, attrs=attrs)
    return hidden.data[:, -1, :]


def top_k_items(scores: np.ndarray, k: int) -> np.ndarray:
    """Top-k real item ids per row, ties broken by ascending item id."""
    v = scores.shape[-1]
    ids = np.arange(v)
    out = []
    for row in np.atleast_2d(scores):
        masked = row.copy()
        masked[PAD] = -np.inf
        order = np.lexsort((ids, -masked))
        out.append(order[:k])
    result = np.stack(out)
    return result if scores.ndim == 2 else result[0]


def loss_recall(scores: Tensor, target, num_sampled=None, rng=None) -> Tensor:
    """Softmax cross-entropy over the catalog (optionally sampled).

    ``scores`` has catalog scores on the last axis; ``target`` holds item
    ids. The pad item is not a legal target.
    """
    target = np.asarray(target)
    if (target == PAD).any():
        raise ModelError("pad target is not a legal recall target")
    if num_sampled is None:
        return softmax_cross_entropy(scores, target)
    if rng is None:
        raise ModelError("sampled softmax needs an rng")
    v = scores.shape[-1]
    neg = rng.integers(1, v, size=target.shape + (num_sampled,))
    cols = np.concatenate([target[..., None], neg], axis=-1)  # target at index 0
    sub = gather_cols(scores, cols)
    return softmax_cross_entropy(sub, np.zeros(target.shape, dtype=np.int64))


def gather_cols(t: Tensor, cols: np.ndarray) -> Tensor:
    """Pick per-position columns from the last axis (sampled-softmax helper)."""
    data = np.take_along_axis(t.data, cols, axis=-1)

    def bwd(g):
        # scatter-add column-by-column: duplicate columns must accumulate
        full = np.zeros_like(t.data)
        idx = np.meshgrid(*[np.arange(s) for s in cols.shape[:-1]], indexing="ij")
        for j in range(cols.shape[-1]):
            np.add.at(full, tuple(idx) + (cols[..., j],), g[..., j])
        t._accumulate(full)

    return t._make_child(data, (t,), bwd)


# -- ranking -----------------------------------------------------------------

LABEL_TOKENS = ("L0", "L1")


def interleave_ranking(items, labels):
    """Alternate items with label tokens: [x1, L{b1}, x2, L{b2}, ...].

    The prediction slot for label b'_k is the index of item x_k (even
    positions 0, 2, ...).
    """
    items = list(items)
    labels = list(labels)
    if len(items) != len(labels):
        raise ModelError(f"items/labels length mismatch: {len(items)} vs {len(labels)}")
    tokens = []
    slots = []
    for k, (x, y) in enumerate(zip(items, labels)):
        slots.append(2 * k)
        tokens.append(x)
        tokens.append(LABEL_TOKENS[int(y)])
    return tokens, slots


def de_interleave_ranking(tokens):
    if len(tokens) % 2 != 0:
        raise ModelError("interleaved token list must have even length")
    items = list(tokens[0::2])
    labels = [LABEL_TOKENS.index(t) for t in tokens[1::2]]
    return items, labels


def score_head(state: Tensor, item_emb: Tensor, head: ScoringHead) -> Tensor:
    """Logit for one (state, item) pair or a batch of pairs.

    dot: <state, item>. mlp: 2-layer perceptron on concat(state, item) with
    SiLU hidden. ffn: transformer-style feed-forward with residual on the
    state, then dot with the item.
    """
    if state.shape != item_emb.shape:
        raise ModelError(f"state/item dim mismatch: {state.shape} vs {item_emb.shape}")
    if head.kind == "dot":
        return _pairwise_dot(state, item_emb)
    if head.kind == "mlp":
        hid = silu(matmul_last(concat_last([state, item_emb]), head.w1) + head.b1)
        out = matmul_last(hid, head.w2) + head.b2
        return out.take_last(0, 1).reshape(out.shape[:-1])
    # ffn
    trans = state + (matmul_last(silu(matmul_last(state, head.w1) + head.b1), head.w2) + head.b2)
    return _pairwise_dot(trans, item_emb)


def matmul_last(t: Tensor, w: Tensor) -> Tensor:
    """Apply a (d_in, d_out) map to the last axis of an arbitrary-rank tensor."""
    lead = t.shape[:-1]
    flat = t.reshape((int(np.prod(lead)) if lead else 1, t.shape[-1]))
    out = matmul(flat, w)
    return out.reshape(lead + (w.shape[-1],))


def _pairwise_dot(a: Tensor, b: Tensor) -> Tensor:
    lead = a.shape[:-1]
    d = a.shape[-1]
    out = matmul(a.reshape(lead + (1, d)), b.reshape(lead + (d, 1)))
    return out.reshape(lead)


def ranking_logits(model: RecModel, items, timestamps, labels, attrs=None) -> Tensor:
    """Per-item-position logits (B, n) for the ranking task."""
    hidden = forward_hidden(model, items, timestamps, labels=labels, attrs=attrs)
    # item positions are the even indices of the interleaved sequence
    states = _even_rows(hidden)
    item_emb = gather(model.tables.item, np.asarray(items))
    return score_head(states, item_emb, model.head)


def _even_rows(t: Tensor) -> Tensor:
    """(..., 2n, d) -> (..., n, d) keeping rows 0, 2, 4, ..."""
    lead = t.shape[:-2]
    n2, d = t.shape[-2], t.shape[-1]
    pairs = t.reshape(lead + (n2 // 2, 2 * d))
    return pairs.take_last(0, d)


def loss_ranking(logits: Tensor, labels, mask=None) -> Tensor:
    """Mean BCE over non-pad prediction slots."""
    return bce_with_logits(logits, np.asarray(labels, dtype=np.float64), mask=mask)

"""Attention blocks covering the full ablation space.

One block = gated self-attention (SiLU- or softmax-weighted scores, with a
configurable additive relative bias or rotary encoding) plus a feed-forward
stage, composed under one of three residual patterns:

* ``hstu``      B(X) = X + FFN(LN(SA(LN(X))))
* ``llama``     H = X + SA(LN(X));  B(X) = H + FFN(LN(H))
* ``postnorm``  H = LN(X + SA(X));  B(X) = LN(H + FFN(H))

Causal masking is always on. Bias tables start at zero, so every additive
bias variant coincides bitwise with ``none`` at initialization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    Tensor,
    concat_last,
    gather,
    layer_norm,
    matmul,
    silu,
    softmax_rows,
)

ACTIVATIONS = ("silu", "softmax")
BIAS_KINDS = ("rel_pos_time", "rel_time_only", "rel_pos_only", "rope", "none")
RESIDUALS = ("hstu", "llama", "postnorm")

NEG_SENTINEL = -1e9  # effectively -inf: exp underflows to exactly 0.0


class NumericError(FloatingPointError):
    """NaN/Inf detected in a forward sub-stage."""


@dataclass
class BlockConfig:
    dim: int = 32
    heads: int = 2
    activation: str = "silu"
    bias_kind: str = "rel_pos_time"
    feature_interaction: bool = True
    residual: str = "hstu"
    ffn_hidden: int = 64
    max_len: int = 50
    time_buckets: int = 128
    time_base: float = math.e

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}, expected one of {ACTIVATIONS}")
        if self.bias_kind not in BIAS_KINDS:
            raise ValueError(f"unknown bias_kind {self.bias_kind!r}, expected one of {BIAS_KINDS}")
        if self.residual not in RESIDUALS:
            raise ValueError(f"unknown residual {self.residual!r}, expected one of {RESIDUALS}")
        if self.dim % self.heads != 0:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")
        if self.bias_kind == "rope" and (self.dim // self.heads) % 2 != 0:
            raise ValueError("rope needs an even per-head dimension")
        if self.time_buckets < 1:
            raise ValueError("time_buckets must be >= 1")
        if self.time_base <= 1.0:
            raise ValueError("time_base must be > 1")

    @property
    def head_dim(self):
        return self.dim // self.heads


@dataclass
class BiasTables:
    """Learnable per-head lookup tables, first-axis indexed for gather.

    ``pos`` has one row per causal offset 0..n-1; ``time`` one row per
    time-difference bucket. Both are (rows, heads).
    """

    pos: Tensor
    time: Tensor


@dataclass
class BlockParams:
    w_uqkv: Tensor
    b_uqkv: Tensor
    w_out: Tensor
    b_out: Tensor
    ln1_gamma: Tensor
    ln1_beta: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor
    ln_inner_gamma: Tensor | None
    ln_inner_beta: Tensor | None
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor
    bias_tables: BiasTables | None

    def named_tensors(self, prefix=""):
        out = []
        for name in ("w_uqkv", "b_uqkv", "w_out", "b_out", "ln1_gamma", "ln1_beta",
                     "ln2_gamma", "ln2_beta", "ln_inner_gamma", "ln_inner_beta",
                     "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2"):
            t = getattr(self, name)
            if t is not None:
                out.append((prefix + name, t))
        if self.bias_tables is not None:
            out.append((prefix + "bias_pos", self.bias_tables.pos))
            out.append((prefix + "bias_time", self.bias_tables.time))
        return out


def trunc_normal(rng, shape, std=0.02, dtype=np.float32):
    a = rng.standard_normal(shape) * std
    return np.clip(a, -2 * std, 2 * std).astype(dtype)


def init_block_params(cfg: BlockConfig, rng: np.random.Generator, dtype=np.float32) -> BlockParams:
    d, f = cfg.dim, cfg.ffn_hidden
    zeros = lambda *s: Tensor(np.zeros(s, dtype=dtype), requires_grad=True)
    ones = lambda *s: Tensor(np.ones(s, dtype=dtype), requires_grad=True)
    w = lambda *s: Tensor(trunc_normal(rng, s, dtype=dtype), requires_grad=True)

    tables = None
    if cfg.bias_kind in ("rel_pos_time", "rel_time_only", "rel_pos_only"):
        tables = BiasTables(pos=zeros(cfg.max_len, cfg.heads),
                            time=zeros(cfg.time_buckets, cfg.heads))
    inner_g = ones(d) if cfg.feature_interaction else None
    inner_b = zeros(d) if cfg.feature_interaction else None
    return BlockParams(
        w_uqkv=w(d, 4 * d), b_uqkv=zeros(4 * d),
        w_out=w(d, d), b_out=zeros(d),
        ln1_gamma=ones(d), ln1_beta=zeros(d),
        ln2_gamma=ones(d), ln2_beta=zeros(d),
        ln_inner_gamma=inner_g, ln_inner_beta=inner_b,
        ffn_w1=w(d, f), ffn_b1=zeros(f),
        ffn_w2=w(f, d), ffn_b2=zeros(d),
        bias_tables=tables,
    )


def block_param_count(cfg: BlockConfig) -> int:
    """Analytic parameter count; must equal the sum of allocated sizes."""
    d, f, h, n, b = cfg.dim, cfg.ffn_hidden, cfg.heads, cfg.max_len, cfg.time_buckets
    count = (d * 4 * d + 4 * d) + (d * d + d) + 4 * d  # projections + two LN affines
    if cfg.feature_interaction:
        count += 2 * d
    count += d * f + f + f * d + d
    if cfg.bias_kind in ("rel_pos_time", "rel_time_only", "rel_pos_only"):
        count += n * h + b * h
    return count


# -- time bucketing and bias matrices ----------------------------------------

def time_bucket(delta, num_buckets: int, base: float = math.e):
    """Log-spaced bucket index: min(floor(log(1+delta)/log(base)), B-1).

    Monotone nondecreasing in delta; negative deltas clamp to 0. Works on
    scalars and arrays.
    """
    if num_buckets < 1:
        raise ValueError("num_buckets must be >= 1")
    if base <= 1.0:
        raise ValueError("base must be > 1")
    delta = np.maximum(np.asarray(delta, dtype=np.float64), 0.0)
    idx = np.floor(np.log1p(delta) / math.log(base)).astype(np.int64)
    idx = np.minimum(idx, num_buckets - 1)
    if idx.ndim == 0:
        return int(idx)
    return idx


def _causal_sentinel(n, dtype):
    s = np.zeros((n, n), dtype=dtype)
    s[np.triu_indices(n, k=1)] = NEG_SENTINEL
    return s


def build_bias(kind, positions, timestamps, tables: BiasTables,
               num_buckets: int = 128, base: float = math.e) -> Tensor:
    """Additive attention-bias matrix for one sequence, shape (heads, n, n).

    Entry (i, j), j <= i, is pos[i-j] + time[bucket(t_i - t_j)] under
    ``rel_pos_time`` (only the respective term for the single-channel
    kinds, all-zero for ``none``); j > i holds the causal -inf sentinel.
    Differentiable with respect to the tables.
    """
    if kind == "rope":
        raise ValueError("rope is applied to Q/K rotations, not as an additive bias")
    if kind not in ("rel_pos_time", "rel_time_only", "rel_pos_only", "none"):
        raise ValueError(f"unknown bias kind {kind!r}")
    positions = np.asarray(positions, dtype=np.int64)
    n = positions.shape[0]
    if n > 1 and not (np.diff(positions) > 0).all():
        raise ValueError("positions must be strictly increasing")
    h = tables.pos.shape[1] if tables is not None else 1
    dtype = tables.pos.dtype if tables is not None else np.float32

    total = None
    if kind in ("rel_pos_time", "rel_pos_only"):
        dist = np.clip(positions[:, None] - positions[None, :], 0, tables.pos.shape[0] - 1)
        pos_part = gather(tables.pos, dist).transpose((2, 0, 1))
        total = pos_part
    if kind in ("rel_pos_time", "rel_time_only"):
        ts = np.asarray(timestamps, dtype=np.int64)
        if ts.shape[0] != n:
            raise ValueError("timestamps length must match positions")
        buckets = time_bucket(ts[:, None] - ts[None, :], num_buckets, base)
        time_part = gather(tables.time, buckets).transpose((2, 0, 1))
        total = time_part if total is None else total + time_part
    if total is None:
        total = Tensor(np.zeros((h, n, n), dtype=dtype))
    else:
        # zero the (clipped-index) upper triangle so no gradient flows into
        # table rows through causally masked entries
        total = total * np.tril(np.ones((n, n), dtype=np.dtype(dtype).type))
    return total + _causal_sentinel(n, np.dtype(dtype).type)


def _build_bias_batch(cfg: BlockConfig, tables: BiasTables, timestamps, n, dtype):
    """Batched additive bias (B_or_1, heads, n, n) without the causal sentinel."""
    total = None
    if cfg.bias_kind in ("rel_pos_time", "rel_pos_only"):
        idx = np.arange(n)
        dist = np.clip(idx[:, None] - idx[None, :], 0, cfg.max_len - 1)
        pos_part = gather(tables.pos, dist).transpose((2, 0, 1)).reshape(1, cfg.heads, n, n)
        total = pos_part
    if cfg.bias_kind in ("rel_pos_time", "rel_time_only"):
        ts = np.asarray(timestamps, dtype=np.int64)
        if ts.ndim == 1:
            ts = ts[None, :]
        buckets = time_bucket(ts[:, :, None] - ts[:, None, :], cfg.time_buckets, cfg.time_base)
        time_part = gather(tables.time, buckets).transpose((0, 3, 1, 2))
        total = time_part if total is None else total + time_part
    return total


# -- rotary encoding ---------------------------------------------------------

def rope_rotate(qk: Tensor, positions, base: float = 10000.0) -> Tensor:
    """Rotate consecutive pairs of the last axis by position-dependent angles.

    Pair i at position p is rotated by p * base**(-2i/d_h). Norm-preserving.
    """
    d_h = qk.shape[-1]
    if d_h % 2 != 0:
        raise ValueError(f"rope needs an even last dimension, got {d_h}")
    n = qk.shape[-2]
    positions = np.asarray(positions, dtype=np.float64)
    if positions.shape[0] != n:
        raise ValueError("positions length must match the sequence axis")
    half = d_h // 2
    theta = base ** (-2.0 * np.arange(half) / d_h)
    ang = positions[:, None] * theta[None, :]
    dt = np.dtype(qk.dtype).type
    cos = np.cos(ang).astype(dt)[..., None]
    sin = np.sin(ang).astype(dt)[..., None]

    pairs = qk.reshape(qk.shape[:-1] + (half, 2))
    even = pairs.take_last(0, 1)
    odd = pairs.take_last(1, 2)
    rot_even = even * cos - odd * sin
    rot_odd = even * sin + odd * cos
    return concat_last([rot_even, rot_odd]).reshape(qk.shape)


# -- block forward -----------------------------------------------------------

def _linear(x, w, b):
    return matmul(x, w) + b


def _split_heads(t, heads, head_dim):
    b, n, _ = t.shape
    return t.reshape(b, n, heads, head_dim).transpose((0, 2, 1, 3))


def _merge_heads(t):
    b, h, n, dh = t.shape
    return t.transpose((0, 2, 1, 3)).reshape(b, n, h * dh)


def _check_finite(arr, stage):
    if not np.isfinite(arr[np.abs(arr) < 1e30]).all() or np.isnan(arr).any():
        raise NumericError(f"non-finite values in {stage}")


def _self_attention(X: Tensor, params: BlockParams, cfg: BlockConfig,
                    timestamps, key_keep, dtype):
    b, n, d = X.shape
    h, dh = cfg.heads, cfg.head_dim

    proj = silu(_linear(X, params.w_uqkv, params.b_uqkv))
    u = proj.take_last(0, d)
    q = proj.take_last(d, 2 * d)
    k = proj.take_last(2 * d, 3 * d)
    v = proj.take_last(3 * d, 4 * d)

    qh, kh, vh = (_split_heads(t, h, dh) for t in (q, k, v))
    if cfg.bias_kind == "rope":
        pos = np.arange(n)
        qh = rope_rotate(qh, pos)
        kh = rope_rotate(kh, pos)

    scale = 1.0 / n if cfg.activation == "silu" else 1.0 / math.sqrt(dh)
    scores = matmul(qh, kh.transpose((0, 1, 3, 2))) * np.asarray(scale, dtype=dtype)

    if cfg.bias_kind in ("rel_pos_time", "rel_time_only", "rel_pos_only"):
        rab = _build_bias_batch(cfg, params.bias_tables, timestamps, n, dtype)
        scores = scores + rab
    _check_finite(scores.data, "attention-scores")

    if cfg.activation == "softmax":
        weights = softmax_rows(scores, mask=key_keep)
    else:
        weights = silu(scores) * key_keep.astype(dtype)

    o = _merge_heads(matmul(weights, vh))
    if cfg.feature_interaction:
        gated = layer_norm(o, params.ln_inner_gamma, params.ln_inner_beta) * u
        return _linear(gated, params.w_out, params.b_out)
    return _linear(o, params.w_out, params.b_out)


def _causal_keep(n, pad_keep, batch):
    """Boolean (B, 1, n, n) key mask: causal, non-pad keys, diagonal forced."""
    causal = np.tril(np.ones((n, n), dtype=bool))
    if pad_keep is None:
        keep = np.broadcast_to(causal, (batch, 1, n, n)).copy()
    else:
        pad_keep = np.asarray(pad_keep, dtype=bool)
        if pad_keep.ndim == 1:
            pad_keep = pad_keep[None, :]
        keep = causal[None, None, :, :] & pad_keep[:, None, None, :]
    idx = np.arange(n)
    keep[..., idx, idx] = True  # pad queries self-attend so no row is empty
    return keep


def block_forward(X: Tensor, params: BlockParams, cfg: BlockConfig,
                  timestamps=None, pad_keep=None) -> Tensor:
    """Run one attention block. X is (n, d) or (batch, n, d)."""
    squeeze = X.data.ndim == 2
    if squeeze:
        X = X.reshape((1,) + X.shape)
    b, n, d = X.shape
    if d != cfg.dim:
        raise ValueError(f"input dim {d} does not match config dim {cfg.dim}")
    if timestamps is None:
        timestamps = np.zeros((1, n), dtype=np.int64)
    dtype = np.dtype(X.dtype).type
    keep = _causal_keep(n, pad_keep, b)

    def sa(z):
        return _self_attention(z, params, cfg, timestamps, keep, dtype)

    def ffn(z):
        return _linear(silu(_linear(z, params.ffn_w1, params.ffn_b1)), params.ffn_w2, params.ffn_b2)

    def ln1(z):
        return layer_norm(z, params.ln1_gamma, params.ln1_beta)

    def ln2(z):
        return layer_norm(z, params.ln2_gamma, params.ln2_beta)

    if cfg.residual == "hstu":
        out = X + ffn(ln2(sa(ln1(X))))
    elif cfg.residual == "llama":
        hid = X + sa(ln1(X))
        out = hid + ffn(ln2(hid))
    else:  # postnorm
        hid = ln1(X + sa(X))
        out = ln2(hid + ffn(hid))

    if squeeze:
        out = out.reshape(out.shape[1:])
    return out


def stack_forward(X0: Tensor, blocks, timestamps=None, pad_keep=None,
                  final_ln=None) -> Tensor:
    """Compose blocks sequentially; ``final_ln`` is an optional (gamma, beta)
    affine applied last (pre-norm convention for hstu/llama residuals)."""
    if not blocks and final_ln is None:
        return X0
    out = X0
    dims = {cfg.dim for _, cfg in blocks}
    if len(dims) > 1:
        raise ValueError(f"blocks disagree on dim: {sorted(dims)}")
    for params, cfg in blocks:
        out = block_forward(out, params, cfg, timestamps=timestamps, pad_keep=pad_keep)
    if final_ln is not None:
        gamma, beta = final_ln
        out = layer_norm(out, gamma, beta)
    return out

"""Deterministic training loop, Adam optimizer, and checkpoint I/O."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .container import ContainerError, load_container, save_container
from .data import PAD
from .model import (
    ModelConfig,
    RecModel,
    forward_hidden,
    init_model,
    ranking_logits,
    loss_ranking,
)
from .tensor import Tensor, gather, matmul, softmax_cross_entropy

log = logging.getLogger(__name__)


class TrainError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 512
    epochs: int = 5
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    grad_clip_norm: float = 1.0
    lr_schedule: str = "none"          # none | cosine
    sampled_negatives: int | None = None   # recall: sampled-softmax mode

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr_schedule not in ("none", "cosine"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    seconds: float
    param_count: int
    eval_metrics: dict = field(default_factory=dict)


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def losses(self):
        return [r.loss for r in self.records]


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=0.0):
        self.params = list(params)  # (name, Tensor) pairs
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {name: np.zeros_like(t.data) for name, t in self.params}
        self.v = {name: np.zeros_like(t.data) for name, t in self.params}

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        for name, p in self.params:
            if p.grad is None:
                continue
            g = p.grad.astype(p.data.dtype)
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m = self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            mhat = m / (1 - self.beta1 ** self.t)
            vhat = v / (1 - self.beta2 ** self.t)
            p.data = p.data - lr * mhat / (np.sqrt(vhat) + self.eps)


def clip_global_norm(params, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``."""
    total = 0.0
    for _, p in params:
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = math.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for _, p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


# -- batched losses ----------------------------------------------------------

def _odd_rows(t):
    """(..., 2n, d) -> (..., n, d) keeping rows 1, 3, 5, ..."""
    lead = t.shape[:-2]
    n2, d = t.shape[-2], t.shape[-1]
    pairs = t.reshape(lead + (n2 // 2, 2 * d))
    return pairs.take_last(d, 2 * d)


def recall_batch_loss(model: RecModel, items, timestamps, behaviors=None,
                      attrs=None, sampled_negatives=None, rng=None) -> Tensor:
    """Autoregressive shifted-target loss over all non-pad positions."""
    hidden = forward_hidden(model, items, timestamps, behaviors=behaviors, attrs=attrs)
    if model.cfg.behavior_tokens:
        hidden = _odd_rows(hidden)  # state after (item, behavior) pair k
    b, n, d = hidden.shape
    states = _take_rows(hidden, 0, n - 1)
    items = np.asarray(items)
    targets = items[:, 1:]
    mask = (items[:, :-1] != PAD) & (targets != PAD)
    table = model.output_table()
    if sampled_negatives is None:
        logits = matmul(states, table.transpose((1, 0)))
        return softmax_cross_entropy(logits, targets, mask)
    if rng is None:
        raise TrainError("sampled softmax needs an rng")
    neg = rng.integers(1, table.shape[0], size=targets.shape + (sampled_negatives,))
    cols = np.concatenate([np.maximum(targets, 1)[..., None], neg], axis=-1)
    emb = gather(table, cols)                                # (B, n-1, s+1, d)
    prod = matmul(states.reshape(b, n - 1, 1, d), emb.transpose((0, 1, 3, 2)))
    logits = prod.reshape(b, n - 1, cols.shape[-1])
    return softmax_cross_entropy(logits, np.zeros_like(targets), mask)


def _take_rows(t, start, stop):
    """Slice the second-to-last axis."""
    lead = t.shape[:-2]
    n, d = t.shape[-2], t.shape[-1]
    flatten = t.reshape(lead + (n * d,))
    return flatten.take_last(start * d, stop * d).reshape(lead + (stop - start, d))


def ranking_batch_loss(model: RecModel, items, timestamps, labels, attrs=None) -> Tensor:
    """Mean BCE at every non-pad item position."""
    logits = ranking_logits(model, items, timestamps, labels, attrs=attrs)
    mask = np.asarray(items) != PAD
    if not mask.any():
        raise TrainError("batch has no non-pad prediction slots")
    return loss_ranking(logits, labels, mask=mask)


# -- training loop -----------------------------------------------------------

def train(model: RecModel, chains, cfg: TrainConfig, eval_fn=None,
          log_stream=None) -> TrainHistory:
    """Train in place over shuffled mini-batches; deterministic under seed.

    ``chains`` are the left-padded training sequences (leave-last-two view).
    ``eval_fn(model) -> dict`` runs after each epoch when given.
    """
    chains = list(chains)
    if not chains:
        raise TrainError("empty training data")
    history = TrainHistory()
    if cfg.epochs == 0:
        return history

    items = np.stack([s.items for s in chains])
    ts = np.stack([s.timestamps for s in chains])
    behaviors = np.stack([s.behaviors for s in chains]) if model.cfg.behavior_tokens else None
    labels = np.stack([s.labels for s in chains]) if model.cfg.task == "ranking" else None
    attrs = np.stack([s.attrs for s in chains]) if model.cfg.side_info else None

    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.parameters(), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
               eps=cfg.eps, weight_decay=cfg.weight_decay)
    n_examples = len(chains)
    param_count = model.param_count()

    for epoch in range(cfg.epochs):
        start_time = time.perf_counter()
        order = rng.permutation(n_examples)
        lr = cfg.lr
        if cfg.lr_schedule == "cosine":
            lr = cfg.lr * 0.5 * (1.0 + math.cos(math.pi * epoch / cfg.epochs))
        losses = []
        for bstart in range(0, n_examples, cfg.batch_size):
            idx = order[bstart:bstart + cfg.batch_size]
            if model.cfg.task == "ranking":
                loss = ranking_batch_loss(model, items[idx], ts[idx], labels[idx],
                                          attrs=None if attrs is None else attrs[idx])
            else:
                loss = recall_batch_loss(model, items[idx], ts[idx],
                                         behaviors=None if behaviors is None else behaviors[idx],
                                         attrs=None if attrs is None else attrs[idx],
                                         sampled_negatives=cfg.sampled_negatives, rng=rng)
            value = loss.item()
            if math.isnan(value):
                raise TrainError(f"NaN loss at epoch {epoch}, batch {bstart // cfg.batch_size}")
            loss.backward()
            clip_global_norm(opt.params, cfg.grad_clip_norm)
            opt.step(lr=lr)
            model.enforce_pad_rows()
            model.zero_grads()
            losses.append(value)
        seconds = time.perf_counter() - start_time
        record = EpochRecord(epoch=epoch, loss=float(np.mean(losses)),
                             seconds=seconds, param_count=param_count)
        if eval_fn is not None:
            record.eval_metrics = eval_fn(model)
        history.records.append(record)
        line = f"epoch={epoch} loss={record.loss:.6f} seconds={seconds:.3f}"
        if log_stream is not None:
            log_stream.write(line + "\n")
        else:
            log.info(line)
    return history


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(model: RecModel, path):
    arrays = [(name, t.data) for name, t in model.parameters()]
    save_container(path, arrays, meta={"kind": "model-checkpoint",
                                       "model_config": model.cfg.to_dict()})


def load_checkpoint(path, expect_cfg: ModelConfig | None = None) -> RecModel:
    arrays, meta = load_container(path)
    if meta.get("kind") != "model-checkpoint":
        raise ContainerError(f"{path}: not a model checkpoint")
    cfg = ModelConfig.from_dict(meta["model_config"])
    if expect_cfg is not None and expect_cfg.to_dict() != cfg.to_dict():
        diffs = _config_diffs(expect_cfg.to_dict(), cfg.to_dict())
        raise ContainerError(f"{path}: checkpoint config mismatch: {diffs}")
    model = init_model(cfg, seed=0)
    expected = dict(model.parameters())
    if set(expected) != set(arrays):
        missing = sorted(set(expected) - set(arrays))
        extra = sorted(set(arrays) - set(expected))
        raise ContainerError(f"{path}: parameter set mismatch (missing {missing}, extra {extra})")
    for name, t in model.parameters():
        stored = arrays[name]
        if stored.shape != t.data.shape:
            raise ContainerError(
                f"{path}: shape mismatch for {name}: checkpoint {stored.shape}, model {t.data.shape}")
        t.data = stored.astype(t.data.dtype)
    return model


def _config_diffs(a: dict, b: dict, prefix=""):
    out = []
    for key in sorted(set(a) | set(b)):
        va, vb = a.get(key), b.get(key)
        if isinstance(va, dict) and isinstance(vb, dict):
            out.extend(_config_diffs(va, vb, prefix=f"{prefix}{key}."))
        elif va != vb:
            out.append(f"{prefix}{key}: expected {va!r}, found {vb!r}")
    return out

"""Estimator facades with the fit/predict/get_params convention.

``X`` is a list of left-padded ``UserSequence`` objects (see ``data``).
These wrap model construction + the training loop for notebook use; the CLI
and the lower-level modules remain the primary interfaces.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .blocks import BlockConfig
from .data import train_chains
from .model import ModelConfig, final_states, forward_recall, init_model, top_k_items, ranking_logits
from .tensor import _stable_sigmoid
from .training import TrainConfig, train


def _check_sequences(X):
    X = list(X)
    if not X:
        raise ValueError("need at least one sequence")
    n = X[0].items.shape[0]
    for s in X:
        if s.items.shape[0] != n:
            raise ValueError("all sequences must share one padded length")
    return X, n


class _Base(BaseEstimator):
    def __init__(self, dim=32, blocks=2, heads=2, activation="silu",
                 bias="rel_pos_time", feature_interaction=True, residual="hstu",
                 head="dot", tie_output=True, lr=1e-3, batch_size=512,
                 epochs=5, seed=0):
        self.dim = dim
        self.blocks = blocks
        self.heads = heads
        self.activation = activation
        self.bias = bias
        self.feature_interaction = feature_interaction
        self.residual = residual
        self.head = head
        self.tie_output = tie_output
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed

    _task = "recall"

    def _model_config(self, vocab, max_len):
        block = BlockConfig(heads=self.heads, activation=self.activation,
                            bias_kind=self.bias,
                            feature_interaction=self.feature_interaction,
                            residual=self.residual, ffn_hidden=2 * self.dim)
        return ModelConfig(vocab=vocab, dim=self.dim, blocks=self.blocks,
                           max_len=max_len, task=self._task, head=self.head,
                           tie_output=self.tie_output, block=block)

    def fit(self, X, y=None):
        """Train on full sequences; the last event of each is held out."""
        X, n = _check_sequences(X)
        vocab = int(max(int(s.items.max()) for s in X))
        self.model_ = init_model(self._model_config(vocab, n), seed=self.seed)
        cfg = TrainConfig(lr=self.lr, batch_size=self.batch_size,
                          epochs=self.epochs, seed=self.seed)
        self.history_ = train(self.model_, train_chains(X), cfg)
        return self

    def _require_fitted(self):
        if not hasattr(self, "model_"):
            raise RuntimeError("estimator is not fitted; call fit first")


class SequenceRecommender(_Base):
    """Next-item retrieval over the full catalog."""

    _task = "recall"

    def predict(self, X, k=10):
        """Top-k item ids per user, shape (len(X), k)."""
        self._require_fitted()
        X, _ = _check_sequences(X)
        return top_k_items(forward_recall(self.model_, X), k)

    def decision_function(self, X):
        """Raw catalog scores, shape (len(X), vocab+1)."""
        self._require_fitted()
        X, _ = _check_sequences(X)
        return forward_recall(self.model_, X)

    def transform(self, X):
        """Final hidden state per user, shape (len(X), dim)."""
        self._require_fitted()
        X, _ = _check_sequences(X)
        return final_states(self.model_, X)


class SequenceRanker(_Base):
    """Per-position click-probability prediction over interleaved sequences."""

    _task = "ranking"

    def predict_proba(self, X):
        """Probability at every item position, shape (len(X), max_len)."""
        self._require_fitted()
        X, _ = _check_sequences(X)
        items = np.stack([s.items for s in X])
        ts = np.stack([s.timestamps for s in X])
        labels = np.stack([s.labels for s in X])
        logits = ranking_logits(self.model_, items, ts, labels)
        return _stable_sigmoid(logits.data)

    def predict(self, X):
        return (self.predict_proba(X) >= 0.5).astype(np.int64)

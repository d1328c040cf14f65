"""Recall and ranking metrics with exact, deterministic semantics.

Rank ties are always broken by ascending item id so results are identical
across runs and platforms. AUC uses the rank-sum formulation with the
half-credit tie correction.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .data import PAD


class MetricError(ValueError):
    pass


@dataclass
class RankedList:
    items: np.ndarray   # ordered ids, best first, no duplicates
    truth: int


@dataclass
class PredictionSet:
    probs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.probs.shape != self.labels.shape:
            raise MetricError(f"probs/labels length mismatch: {self.probs.shape} vs {self.labels.shape}")
        if self.probs.size and (self.probs.min() < 0 or self.probs.max() > 1):
            raise MetricError("probabilities must lie in [0, 1]")


def _rank_of_truth(lst: RankedList):
    """1-based rank of the truth item, or None if absent."""
    hits = np.nonzero(np.asarray(lst.items) == lst.truth)[0]
    if hits.size == 0:
        return None
    return int(hits[0]) + 1


def hr_at_k(lists, k: int) -> float:
    """Fraction of lists whose truth item is within the top k positions."""
    if k < 1:
        raise MetricError("K must be >= 1")
    lists = list(lists)
    hits = 0
    for lst in lists:
        rank = _rank_of_truth(lst)
        if rank is not None and rank <= k:
            hits += 1
    return hits / len(lists)


def ndcg_at_k(lists, k: int) -> float:
    """Single-relevant-item NDCG: 1/log2(1+rank) if rank <= k, else 0."""
    if k < 1:
        raise MetricError("K must be >= 1")
    lists = list(lists)
    total = 0.0
    for lst in lists:
        rank = _rank_of_truth(lst)
        if rank is not None and rank <= k:
            total += 1.0 / np.log2(1.0 + rank)
    return total / len(lists)


def mrr(lists) -> float:
    lists = list(lists)
    total = 0.0
    for lst in lists:
        rank = _rank_of_truth(lst)
        if rank is not None:
            total += 1.0 / rank
    return total / len(lists)


def auc(preds: PredictionSet) -> float:
    """P(score_pos > score_neg) + 0.5 P(tie), via the rank-sum formula."""
    labels = preds.labels
    pos = int((labels == 1).sum())
    neg = int((labels == 0).sum())
    if pos == 0 or neg == 0:
        raise MetricError("AUC undefined for single-class input")
    scores = preds.probs
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    r = 1
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = (r + (r + (j - i))) / 2.0  # average rank over the tie group
        r += j - i + 1
        i = j + 1
    rank_sum = ranks[labels == 1].sum()
    return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg)


def logloss(preds: PredictionSet) -> float:
    """Mean binary cross-entropy with probabilities clipped to [1e-7, 1-1e-7]."""
    p = np.clip(preds.probs, 1e-7, 1.0 - 1e-7)
    y = preds.labels
    return float(-(y * np.log(p) + (1 - y) * np.log(1.0 - p)).mean())


# -- model evaluation --------------------------------------------------------

def truth_ranks(scores: np.ndarray, truths) -> np.ndarray:
    """Deterministic 1-based rank of each truth item under (-score, id) order.

    ``scores`` is (B, V+1); the pad column is excluded from the ranking.
    """
    truths = np.asarray(truths)
    ranks = np.empty(len(truths), dtype=np.int64)
    for i, (row, t) in enumerate(zip(scores, truths)):
        s_t = row[t]
        real = row[1:]  # drop pad column
        ids = np.arange(1, len(row))
        higher = int((real > s_t).sum())
        tied_before = int(((real == s_t) & (ids < t)).sum())
        ranks[i] = higher + tied_before + 1
    return ranks


def evaluate_recall(model, test_examples, ks=(10, 50), batch_size=256,
                    target_domain=None):
    """Full-catalog HR@K / NDCG@K for each K, plus MRR.

    ``target_domain`` (dense domain id) restricts evaluation to test
    examples whose held-out item belongs to that domain.
    """
    from .model import forward_recall  # late import to avoid a cycle

    examples = list(test_examples)
    if target_domain is not None:
        examples = [ex for ex in examples if ex.target_domain == target_domain]
    if not examples:
        raise MetricError("empty test set")
    all_ranks = []
    for start in range(0, len(examples), batch_size):
        chunk = examples[start:start + batch_size]
        scores = forward_recall(model, [ex.inputs for ex in chunk])
        all_ranks.append(truth_ranks(scores, [ex.target for ex in chunk]))
    ranks = np.concatenate(all_ranks)
    out = {}
    for k in ks:
        out[f"hr@{k}"] = float((ranks <= k).mean())
        out[f"ndcg@{k}"] = float(np.where(ranks <= k, 1.0 / np.log2(1.0 + ranks), 0.0).mean())
    out["mrr"] = float((1.0 / ranks).mean())
    return out


def evaluate_ranking(model, test_examples, batch_size=256):
    """Pooled AUC and Logloss over each user's held-out label."""
    from .model import ranking_logits  # late import to avoid a cycle
    from .tensor import _stable_sigmoid

    examples = list(test_examples)
    if not examples:
        raise MetricError("empty test set")
    probs, labels = [], []
    for start in range(0, len(examples), batch_size):
        chunk = examples[start:start + batch_size]
        # score the last item of the full sequence; its own label token sits
        # after the prediction slot, so the causal mask prevents leakage
        items = np.stack([ex.full.items for ex in chunk])
        ts = np.stack([ex.full.timestamps for ex in chunk])
        labs = np.stack([ex.full.labels for ex in chunk])
        logits = ranking_logits(model, items, ts, labs)
        probs.extend(_stable_sigmoid(logits.data[:, -1]).tolist())
        labels.extend(int(ex.target_label) for ex in chunk)
    preds = PredictionSet(np.clip(np.asarray(probs), 0.0, 1.0), np.asarray(labels))
    return {"auc": float(auc(preds)), "logloss": logloss(preds)}


# -- report serialization ----------------------------------------------------

REPORT_HEADER = ["variant", "task", "dataset", "blocks", "dim", "heads", "seed", "metric", "value"]


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)

    def add(self, variant, task, dataset, blocks, dim, heads, seed, metrics: dict):
        for name, value in metrics.items():
            self.rows.append([variant, task, dataset, int(blocks), int(dim),
                              int(heads), int(seed), name, float(value)])

    def write_csv(self, path, append=False):
        mode = "a" if append else "w"
        new_file = not append
        try:
            with open(path) as fh:
                new_file = append and fh.readline() == ""
        except FileNotFoundError:
            new_file = True
        with open(path, mode, newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            if new_file:
                writer.writerow(REPORT_HEADER)
            for row in self.rows:
                writer.writerow(row[:8] + [f"{row[8]:.6f}"])

    @staticmethod
    def read_csv(path):
        rows = []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != REPORT_HEADER:
                raise MetricError(f"{path} line 1: bad report header")
            for line_no, row in enumerate(reader, start=2):
                if len(row) != 9:
                    raise MetricError(f"{path} line {line_no}: expected 9 fields")
                try:
                    rows.append([row[0], row[1], row[2], int(row[3]), int(row[4]),
                                 int(row[5]), int(row[6]), row[7], float(row[8])])
                except ValueError:
                    raise MetricError(f"{path} line {line_no}: bad numeric field") from None
        return rows

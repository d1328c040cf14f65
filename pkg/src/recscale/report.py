"""Summaries over result CSVs: best points, depth-by-width analysis, norms."""

from __future__ import annotations

import statistics
from collections import defaultdict

import numpy as np

from .reference import REFERENCE_LABEL, ReferenceTable

# metrics where smaller is better
_LOWER_BETTER = {"logloss"}


def best_points(rows):
    """Best grid point per (dataset, task, metric).

    ``rows`` use the report CSV layout:
    [variant, task, dataset, blocks, dim, heads, seed, metric, value].
    Returns {(dataset, task, metric): row}. Ties keep the first row in input
    order, which is deterministic because sweeps write lexicographically.
    """
    best = {}
    for row in rows:
        _, task, dataset, _, _, _, _, metric, value = row
        key = (dataset, task, metric)
        if key not in best:
            best[key] = row
            continue
        incumbent = best[key][8]
        if metric in _LOWER_BETTER:
            if value < incumbent:
                best[key] = row
        elif value > incumbent:
            best[key] = row
    return best


def optimal_depth_per_dim(rows, metric="hr@10"):
    """For each embedding dim, the block count maximizing the seed-mean metric.

    Returns {dim: (best_blocks, mean_value)}.
    """
    sums = defaultdict(list)
    for row in rows:
        _, _, _, blocks, dim, _, _, m, value = row
        if m == metric:
            sums[(dim, blocks)].append(value)
    by_dim = defaultdict(dict)
    for (dim, blocks), values in sums.items():
        by_dim[dim][blocks] = sum(values) / len(values)
    out = {}
    for dim, per_blocks in by_dim.items():
        if metric in _LOWER_BETTER:
            best_blocks = min(per_blocks, key=lambda b: (per_blocks[b], b))
        else:
            best_blocks = max(per_blocks, key=lambda b: (per_blocks[b], -b))
        out[dim] = (best_blocks, per_blocks[best_blocks])
    return out


def depth_width_products(optimal):
    """[(dim, best_blocks, blocks*dim), ...] sorted by dim."""
    return [(dim, blocks, blocks * dim) for dim, (blocks, _) in sorted(optimal.items())]


def coefficient_of_variation(values) -> float:
    """Population std / mean; exactly 0.0 for constant input."""
    values = list(values)
    if not values:
        raise ValueError("empty value list")
    mean = statistics.fmean(values)
    if mean == 0:
        raise ValueError("CV undefined for zero mean")
    if all(v == values[0] for v in values):
        return 0.0
    return statistics.pstdev(values) / mean


def embedding_norm_stats(matrix) -> dict:
    """Mean and max L2 row norms of an (n, d) embedding matrix."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.size == 0:
        return {"mean_norm": 0.0, "max_norm": 0.0}
    norms = np.linalg.norm(matrix, axis=-1)
    return {"mean_norm": float(norms.mean()), "max_norm": float(norms.max())}


def render_report(rows, embeddings=None, reference: ReferenceTable | None = None,
                  ld_metric="hr@10"):
    """Plain-text report over result rows; returns the text."""
    lines = []
    best = best_points(rows)
    lines.append("== best grid points ==")
    for (dataset, task, metric), row in sorted(best.items()):
        variant, _, _, blocks, dim, heads, seed, _, value = row
        lines.append(f"{dataset} {task} {metric}: {value:.6f}  "
                     f"(variant={variant} blocks={blocks} dim={dim} heads={heads} seed={seed})")

    by_dstask = defaultdict(list)
    for row in rows:
        by_dstask[(row[2], row[1])].append(row)
    lines.append("")
    lines.append("== optimal depth x width ==")
    for (dataset, task), group in sorted(by_dstask.items()):
        optimal = optimal_depth_per_dim(group, metric=ld_metric)
        if not optimal:
            continue
        products = depth_width_products(optimal)
        for dim, blocks, product in products:
            lines.append(f"{dataset} {task}: dim={dim} best_blocks={blocks} product={product}")
        if len(products) >= 2:
            cv = coefficient_of_variation([p for _, _, p in products])
            lines.append(f"{dataset} {task}: product CV across dims = {cv:.6f}")

    if embeddings is not None:
        stats = embedding_norm_stats(embeddings)
        lines.append("")
        lines.append("== exported user embeddings ==")
        lines.append(f"mean L2 norm = {stats['mean_norm']:.6f}")
        lines.append(f"max L2 norm = {stats['max_norm']:.6f}")

    if reference is not None:
        lines.append("")
        lines.append(f"== {REFERENCE_LABEL} ==")
        ref_names = {"hr@10": "HR@10", "ndcg@10": "NDCG@10", "mrr": "MRR",
                     "auc": "AUC", "logloss": "Logloss"}
        shown = set()
        for row in rows:
            blocks, metric = row[3], row[7]
            if metric not in ref_names:
                continue
            for dataset in ("ML-1M", "ML-20M", "AMZ-Books"):
                ref = reference.get("HSTU", blocks, dataset, ref_names[metric])
                key = (blocks, dataset, metric)
                if ref is not None and key not in shown:
                    shown.add(key)
                    lines.append(f"HSTU blocks={blocks} {dataset} {metric}: {ref:.4f}")
    return "\n".join(lines) + "\n"

"""Independent naive implementations used as oracles by unit and acceptance
tests. Deliberately written as plain per-query loops with python sorting,
kept separate from the engine's vectorized code paths.
"""
from __future__ import annotations

import numpy as np


def naive_rankings(matrix, gallery_ids=None):
    """Per-query full orderings via python sort: descending score, then
    ascending gallery id (column index stands in for the id when ids are
    already in ascending order)."""
    matrix = np.asarray(matrix)
    n_q, n_g = matrix.shape
    keys = list(range(n_g)) if gallery_ids is None else list(gallery_ids)
    orders = []
    for qi in range(n_q):
        row = matrix[qi]
        order = sorted(range(n_g), key=lambda j: (-row[j], keys[j]))
        orders.append(order)
    return orders


def naive_rank_k(matrix, query_pids, gallery_pids, k):
    orders = naive_rankings(matrix)
    hits = 0
    for qi, order in enumerate(orders):
        top = order[:k]
        if any(gallery_pids[j] == query_pids[qi] for j in top):
            hits += 1
    return 100.0 * hits / len(orders)


def naive_mean_ap(matrix, query_pids, gallery_pids):
    orders = naive_rankings(matrix)
    aps = []
    for qi, order in enumerate(orders):
        relevant_total = sum(1 for p in gallery_pids if p == query_pids[qi])
        seen = 0
        precision_sum = 0.0
        for position, j in enumerate(order, start=1):
            if gallery_pids[j] == query_pids[qi]:
                seen += 1
                precision_sum += seen / position
        aps.append(precision_sum / relevant_total)
    return 100.0 * float(np.mean(aps))

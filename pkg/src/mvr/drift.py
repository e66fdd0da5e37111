"""Drift diagnostics: how far reformulation embeddings land from their source,
and which words each sentence variant attends to.

These are the numbers behind the "same meaning, different feature" problem
the compensation mechanism addresses; the engine exports them for external
plotting.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .vectors import EmbeddingVector, cosine_similarity


@dataclass(frozen=True)
class DriftRecord:
    """Distances between one source embedding and its view embeddings."""

    source_id: str
    distances: tuple[float, ...]  # L2, per view
    cosines: tuple[float, ...]


def measure_drift(
    source_id: str,
    base: EmbeddingVector,
    views: list[EmbeddingVector],
) -> DriftRecord:
    distances = []
    cosines = []
    for v in views:
        distances.append(float(np.linalg.norm(base.values - v.values)))
        cosines.append(cosine_similarity(base, v))
    return DriftRecord(
        source_id=source_id,
        distances=tuple(distances),
        cosines=tuple(cosines),
    )


def word_attention_matrix(
    token_vectors: list[EmbeddingVector],
    sentence_vectors: list[EmbeddingVector],
) -> np.ndarray:
    """Cosine of every word vector against every sentence variant.

    Rows are words, columns sentence variants (original first by convention);
    this is the data behind word-attention heatmaps.
    """
    out = np.empty((len(token_vectors), len(sentence_vectors)), dtype=np.float64)
    for i, tv in enumerate(token_vectors):
        for j, sv in enumerate(sentence_vectors):
            out[i, j] = cosine_similarity(tv, sv)
    return out


def summarize(records: list[DriftRecord]) -> dict:
    """Aggregate mean/percentile statistics over all per-view distances."""
    all_d = np.array([d for r in records for d in r.distances], dtype=np.float64)
    all_c = np.array([c for r in records for c in r.cosines], dtype=np.float64)
    if all_d.size == 0:
        return {"views": 0}
    pct = lambda a, q: float(np.percentile(a, q))
    return {
        "views": int(all_d.size),
        "distance_mean": float(all_d.mean()),
        "distance_p50": pct(all_d, 50),
        "distance_p90": pct(all_d, 90),
        "distance_max": float(all_d.max()),
        "cosine_mean": float(all_c.mean()),
        "cosine_p10": pct(all_c, 10),
        "cosine_min": float(all_c.min()),
    }


def write_drift_report(records: list[DriftRecord], summary: dict, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "drift.jsonl", "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(
                json.dumps(
                    {
                        "source_id": r.source_id,
                        "distances": list(r.distances),
                        "cosines": list(r.cosines),
                    }
                )
                + "\n"
            )
    (out_dir / "drift_summary.json").write_text(
        json.dumps(summary, indent=2) + "\n", encoding="utf-8"
    )
    return out_dir

"""Exact cosine-similarity gallery search.

Galleries at this task's scale (tens of thousands) are well within brute
force range, so the scan is exact: a blocked float64 matrix product over
unit-normalized rows. Ties are broken by ascending gallery id so metrics are
run-to-run stable.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, DimMismatchError, RangeError, ZeroVectorError
from .store import EmbeddingStore
from .vectors import EmbeddingVector

DEFAULT_BLOCK_SIZE = 128


@dataclass(frozen=True)
class GalleryIndex:
    """Unit-normalized gallery vectors in lexicographic id order."""

    ids: tuple[str, ...]
    person_ids: tuple[str, ...]
    matrix: np.ndarray  # (n, dim) float64, rows unit-norm

    def __post_init__(self):
        if len(self.ids) != len(self.person_ids) or len(self.ids) != self.matrix.shape[0]:
            raise ValueError("ids, person_ids and matrix rows must align")

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class RankedResult:
    """Gallery ids for one query, most similar first."""

    query_id: str
    gallery_ids: tuple[str, ...]
    scores: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "gallery_ids", tuple(self.gallery_ids))
        if len(self.gallery_ids) != len(self.scores):
            raise ValueError("gallery_ids and scores must be parallel")
        if len(self.scores) > 1 and np.any(np.diff(self.scores) > 0):
            raise ValueError("scores must be non-increasing")


def _normalize_rows(matrix: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        bad = int(np.argmax(norms[:, 0] == 0.0))
        raise ZeroVectorError(f"{what} row {bad} has zero norm")
    return matrix / norms


def build_index(store: EmbeddingStore, identities: dict[str, str]) -> GalleryIndex:
    """Normalized index over a store; every id needs an identity label."""
    ids = store.ids()  # lexicographic
    missing = [i for i in ids if i not in identities]
    if missing:
        raise DataError(f"missing identity labels for ids: {missing[:5]}")
    if not ids:
        return GalleryIndex(ids=(), person_ids=(), matrix=np.zeros((0, store.dim)))
    matrix = np.stack([store.get(i) for i in ids]).astype(np.float64)
    matrix = _normalize_rows(matrix, "gallery")
    matrix.setflags(write=False)
    return GalleryIndex(
        ids=tuple(ids),
        person_ids=tuple(identities[i] for i in ids),
        matrix=matrix,
    )


def _query_matrix(queries, dim: int) -> np.ndarray:
    if isinstance(queries, np.ndarray):
        q = np.asarray(queries, dtype=np.float64)
        if q.ndim == 1:
            q = q[None, :]
    else:
        arrs = []
        for v in queries:
            arrs.append(v.values if isinstance(v, EmbeddingVector) else np.asarray(v, dtype=np.float64))
        q = np.stack(arrs) if arrs else np.zeros((0, dim))
    if q.shape[1] != dim:
        raise DimMismatchError(f"query dim {q.shape[1]} != index dim {dim}")
    return q


def similarity_matrix(
    index: GalleryIndex,
    queries,
    block_size: int = DEFAULT_BLOCK_SIZE,
) -> np.ndarray:
    """Dense (queries x gallery) cosine matrix.

    Queries are normalized internally; computation is blocked across queries
    only, so the result does not depend on the block size.
    """
    q = _query_matrix(queries, index.dim)
    q = _normalize_rows(q, "query")
    out = np.empty((q.shape[0], len(index)), dtype=np.float64)
    for start in range(0, q.shape[0], max(1, block_size)):
        block = q[start : start + block_size]
        out[start : start + block.shape[0]] = block @ index.matrix.T
    np.clip(out, -1.0, 1.0, out=out)
    return out


def rank_row(scores: np.ndarray) -> np.ndarray:
    """Full descending-score ordering of one similarity row.

    Stable sort + lexicographic column order give the ascending-id tie rule.
    """
    return np.argsort(-scores, kind="stable")


def search(index: GalleryIndex, query, k: int, query_id: str = "") -> RankedResult:
    """Exact top-k for one query; equal scores rank by ascending gallery id."""
    if k <= 0:
        raise RangeError(f"k must be positive, got {k}")
    if len(index) == 0:
        return RankedResult(query_id=query_id, gallery_ids=(), scores=np.zeros(0))
    scores = similarity_matrix(index, [query])[0]
    order = rank_row(scores)[: min(k, len(index))]
    return RankedResult(
        query_id=query_id,
        gallery_ids=tuple(index.ids[i] for i in order),
        scores=scores[order],
    )


def write_rankings(results: list[RankedResult], path) -> None:
    """Export rankings as JSONL: {query_id, results: [[gallery_id, score], ...]}."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for res in results:
            fh.write(
                json.dumps(
                    {
                        "query_id": res.query_id,
                        "results": [
                            [gid, float(score)]
                            for gid, score in zip(res.gallery_ids, res.scores)
                        ],
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )

"""Residual mean-pool feature compensation.

A base feature is shifted toward the shared core meaning of its reformulation
views: output = base + weight * mean(views), optionally renormalized. The
text side weights the view mean by alpha, the image side (whose views are
text embeddings of reformulated image captions) by beta.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

from .errors import DimMismatchError, RangeError
from .records import DIVERSE, KEY_CONSISTENT, CompensationConfig, ReformulationSet
from .vectors import EmbeddingVector, l2_normalize, mean_pool

log = logging.getLogger(__name__)

QUERY_TEXT = "query_text"
GALLERY_IMAGE = "gallery_image"


@dataclass(frozen=True)
class CompensatedFeature:
    source_id: str
    base: EmbeddingVector
    views_used: int
    output: EmbeddingVector
    side: str


def _compensate(
    base: EmbeddingVector,
    view_vectors: list[EmbeddingVector],
    weight: float,
    config: CompensationConfig,
    side: str,
    source_id: str,
) -> CompensatedFeature:
    for v in view_vectors:
        if v.dim != base.dim:
            raise DimMismatchError(
                f"{source_id or side}: view dim {v.dim} != base dim {base.dim}"
            )
    views = list(view_vectors[: config.max_views])
    if views:
        pooled = mean_pool(views)
        output = EmbeddingVector(base.values + weight * pooled.values)
    else:
        log.warning("%s %s: no views available, passing base feature through", side, source_id)
        output = EmbeddingVector(base.values)
    if config.renormalize_output:
        output = l2_normalize(output)
    return CompensatedFeature(
        source_id=source_id,
        base=base,
        views_used=len(views),
        output=output,
        side=side,
    )


def compensate_text(
    base: EmbeddingVector,
    view_vectors: list[EmbeddingVector],
    config: CompensationConfig,
    source_id: str = "",
) -> CompensatedFeature:
    """Compensate a query text feature with its reformulation embeddings.

    Views beyond ``config.max_views`` are ignored (stable prefix). An empty
    view list degrades to the base feature rather than failing retrieval.
    """
    return _compensate(base, view_vectors, config.alpha, config, QUERY_TEXT, source_id)


def compensate_image(
    base: EmbeddingVector,
    caption_view_vectors: list[EmbeddingVector],
    config: CompensationConfig,
    source_id: str = "",
) -> CompensatedFeature:
    """Compensate a gallery image feature with reformulated-caption embeddings."""
    return _compensate(
        base, caption_view_vectors, config.beta, config, GALLERY_IMAGE, source_id
    )


def truncate_views(rset: ReformulationSet, m: int) -> ReformulationSet:
    """First m texts of the set, in original order.

    The prefix is stable so nested truncations give nested view sets, which
    keeps compensation-scale sweeps comparable across scales.
    """
    if m < 0 or m > len(rset.texts):
        raise RangeError(f"cannot truncate {len(rset.texts)} views to {m}")
    return ReformulationSet(
        source_id=rset.source_id,
        strategy=rset.strategy,
        provider=rset.provider,
        temperature=rset.temperature,
        texts=rset.texts[:m],
    )


def gather_view_texts(
    sets: list[ReformulationSet],
    source_id: str,
    strategies: tuple[str, ...] = (KEY_CONSISTENT, DIVERSE),
) -> list[str]:
    """Concatenate one source's view texts, key-consistent sets first.

    Within a strategy, sets keep their given (provider) order. Ablations pick
    strategy subsets here, before any truncation.
    """
    ordered = []
    for strategy in (KEY_CONSISTENT, DIVERSE):
        if strategy not in strategies:
            continue
        for rset in sets:
            if rset.source_id == source_id and rset.strategy == strategy:
                ordered.extend(rset.texts)
    return ordered

"""Visually-key word extraction by token-to-sentence similarity.

Each word's raw score is the cosine between its token vector and the caption's
sentence vector. Scores are centered by subtracting the caption mean, so a
small negative threshold (default -0.03) keeps near-neutral words while
dropping clearly off-center ones. Function words are removed by a stopword
list before thresholding because raw cosine against the sentence vector does
not reliably exclude them.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyKeywordSetError
from .records import TokenizedCaption
from .vectors import cosine_similarity

DEFAULT_DELTA = -0.03

# Articles, pronouns, copulas/auxiliaries, conjunctions, prepositions.
DEFAULT_STOPWORDS = frozenset(
    """
    a an the this that these those
    i you he she it we they him her them his hers its their theirs my your our
    who whom which what
    is are was were am be been being
    has have had do does did
    and or but nor so yet
    in on at by of to with from for as into onto over under above below
    between through about against during without within near behind beside
    up down off out
    not no there here while when where
    """.split()
)


@dataclass(frozen=True)
class KeywordResult:
    """Kept keywords with their centered scores, plus what was dropped.

    ``keywords`` preserves the caption's word order; ``scores`` is parallel to
    it. ``dropped`` holds (word, score) pairs that survived the stopword
    filter but fell below the threshold.
    """

    caption_id: str
    keywords: tuple[str, ...]
    scores: tuple[float, ...]
    delta: float
    dropped: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "keywords", tuple(self.keywords))
        object.__setattr__(self, "scores", tuple(self.scores))
        object.__setattr__(self, "dropped", tuple(tuple(d) for d in self.dropped))
        if len(self.keywords) != len(self.scores):
            raise ValueError("keywords and scores must be parallel")


def centered_scores(tc: TokenizedCaption) -> np.ndarray:
    """Per-word cosine against the sentence vector, centered by the mean."""
    raw = np.array(
        [cosine_similarity(tv, tc.sentence_vector) for tv in tc.token_vectors],
        dtype=np.float64,
    )
    return raw - raw.mean()


def extract_keywords(
    tc: TokenizedCaption,
    delta: float = DEFAULT_DELTA,
    stopwords: frozenset[str] | set[str] | None = None,
) -> KeywordResult:
    """Keep non-stopword words whose centered score clears ``delta``.

    Duplicate surface forms (case-folded) are deduplicated keeping the first
    occurrence. Raises EmptyKeywordSetError when nothing survives, in which
    case callers fall back to the diversity-only reformulation strategy.
    """
    if stopwords is None:
        stopwords = DEFAULT_STOPWORDS
    scores = centered_scores(tc)

    kept: list[tuple[str, float]] = []
    dropped: list[tuple[str, float]] = []
    seen: set[str] = set()
    for word, score in zip(tc.words, scores):
        folded = word.casefold()
        if folded in stopwords or folded in seen:
            continue
        seen.add(folded)
        if score >= delta:
            kept.append((word, float(score)))
        else:
            dropped.append((word, float(score)))

    if not kept:
        raise EmptyKeywordSetError(
            f"caption {tc.caption.id!r}: every word was filtered out"
        )
    return KeywordResult(
        caption_id=tc.caption.id,
        keywords=tuple(w for w, _ in kept),
        scores=tuple(s for _, s in kept),
        delta=delta,
        dropped=tuple(dropped),
    )

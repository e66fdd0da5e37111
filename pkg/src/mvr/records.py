"""Domain records: captions, tokenized captions, reformulation sets, and the
compensation configuration. All types are immutable values after construction
and safe to share across threads.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DimMismatchError
from .vectors import EmbeddingVector

QUERY = "query"
GALLERY_CAPTION = "gallery_caption"
CAPTION_KINDS = (QUERY, GALLERY_CAPTION)

KEY_CONSISTENT = "key_consistent"
DIVERSE = "diverse"
STRATEGIES = (KEY_CONSISTENT, DIVERSE)


@dataclass(frozen=True)
class CaptionRecord:
    """An identified text: either a retrieval query or a gallery caption."""

    id: str
    person_id: str
    text: str
    kind: str = QUERY

    def __post_init__(self):
        if not self.id:
            raise ValueError("caption id must be nonempty")
        if not self.text:
            raise ValueError(f"caption {self.id!r} has empty text")
        if self.kind not in CAPTION_KINDS:
            raise ValueError(f"unknown caption kind {self.kind!r}")


@dataclass(frozen=True)
class TokenizedCaption:
    """A caption together with its word list and per-word embedding vectors.

    Words come from whatever tokenizer produced the token bundle; the engine
    never re-tokenizes, so words and token_vectors stay aligned by index.
    """

    caption: CaptionRecord
    words: tuple[str, ...]
    token_vectors: tuple[EmbeddingVector, ...]
    sentence_vector: EmbeddingVector

    def __post_init__(self):
        object.__setattr__(self, "words", tuple(self.words))
        object.__setattr__(self, "token_vectors", tuple(self.token_vectors))
        if len(self.words) != len(self.token_vectors):
            raise ValueError(
                f"caption {self.caption.id!r}: {len(self.words)} words vs "
                f"{len(self.token_vectors)} token vectors"
            )
        if len(self.words) < 1:
            raise ValueError(f"caption {self.caption.id!r} has no words")
        dim = self.sentence_vector.dim
        for v in self.token_vectors:
            if v.dim != dim:
                raise DimMismatchError(
                    f"caption {self.caption.id!r}: token dim {v.dim} != sentence dim {dim}"
                )


@dataclass(frozen=True)
class ReformulationSet:
    """Ordered reformulated texts for one source under one strategy.

    Production paths (parsing + validation) always yield at least one text;
    an empty list is only reachable through view truncation, which the scale
    sweep relies on.
    """

    source_id: str
    strategy: str
    provider: str
    temperature: float
    texts: tuple[str, ...]

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if not (0.0 <= self.temperature < 2.0):
            raise ValueError(f"temperature {self.temperature} outside [0, 2)")
        object.__setattr__(self, "texts", tuple(self.texts))
        for t in self.texts:
            if not t:
                raise ValueError(f"set for {self.source_id!r} contains an empty text")

    def __len__(self) -> int:
        return len(self.texts)


@dataclass(frozen=True)
class CompensationConfig:
    """Weights and limits for feature compensation."""

    alpha: float = 0.75
    beta: float = 0.3
    max_views: int = 30
    renormalize_output: bool = True

    def __post_init__(self):
        for name in ("alpha", "beta"):
            val = getattr(self, name)
            if not math.isfinite(val) or val < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {val}")
        if self.max_views < 1:
            raise ValueError(f"max_views must be >= 1, got {self.max_views}")

    def snapshot(self) -> dict:
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "max_views": self.max_views,
            "renormalize_output": self.renormalize_output,
        }


def read_captions(path) -> list[CaptionRecord]:
    """Read caption records from a JSONL file.

    Each line is an object with keys id, person_id, text and optional kind.
    """
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            records.append(
                CaptionRecord(
                    id=str(obj["id"]),
                    person_id=str(obj.get("person_id", "")),
                    text=str(obj["text"]),
                    kind=str(obj.get("kind", QUERY)),
                )
            )
    seen = set()
    for rec in records:
        if rec.id in seen:
            raise ValueError(f"duplicate caption id {rec.id!r} in {path}")
        seen.add(rec.id)
    return records


def write_captions(records: list[CaptionRecord], path) -> None:
    """Write caption records as JSONL (one object per line)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(
                json.dumps(
                    {
                        "id": rec.id,
                        "person_id": rec.person_id,
                        "text": rec.text,
                        "kind": rec.kind,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )

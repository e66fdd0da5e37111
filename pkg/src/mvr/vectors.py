"""Embedding vector type and the small amount of vector arithmetic everything
else is built on.

Convention: features are stored on disk as float32, but all arithmetic here
(means, dot products, norms) accumulates in float64 to keep error bounded on
large galleries.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimMismatchError, EmptyViewSetError, ZeroVectorError

UNIT_NORM_TOL = 1e-5


def _as_float64(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("embedding values must be a nonempty 1-D sequence")
    if not np.all(np.isfinite(arr)):
        raise ValueError("embedding values must be finite (no NaN/Inf)")
    return arr


@dataclass(frozen=True)
class EmbeddingVector:
    """A fixed-dimension real-valued feature vector.

    ``normalized`` asserts the vector is unit L2 norm (within 1e-5); it is
    validated at construction so downstream code can trust the flag.
    """

    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        arr = _as_float64(self.values)
        if self.normalized:
            norm = float(np.linalg.norm(arr))
            if abs(norm - 1.0) > UNIT_NORM_TOL:
                raise ValueError(f"normalized flag set but L2 norm is {norm}")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingVector):
            return NotImplemented
        return (
            self.normalized == other.normalized
            and self.values.shape == other.values.shape
            and bool(np.array_equal(self.values, other.values))
        )

    def __hash__(self):
        return hash((self.values.tobytes(), self.normalized))


def mean_pool(vectors: list[EmbeddingVector]) -> EmbeddingVector:
    """Element-wise arithmetic mean of the given vectors.

    Raises EmptyViewSetError on an empty list and DimMismatchError when the
    inputs do not all share one dimension. The result's normalized flag is
    unset (a mean of unit vectors is generally not unit).
    """
    if not vectors:
        raise EmptyViewSetError("cannot mean-pool an empty view set")
    dim = vectors[0].dim
    for v in vectors[1:]:
        if v.dim != dim:
            raise DimMismatchError(f"mean_pool saw dims {dim} and {v.dim}")
    stacked = np.stack([v.values for v in vectors])  # float64 already
    # summing each coordinate in sorted order makes the result independent of
    # the input ordering, bit for bit
    stacked = np.sort(stacked, axis=0)
    return EmbeddingVector(stacked.sum(axis=0) / len(vectors))


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine of the angle between a and b, clamped to [-1, 1].

    Clamping guards downstream monotone assumptions against rounding that can
    push the ratio slightly out of range.
    """
    if a.dim != b.dim:
        raise DimMismatchError(f"cosine_similarity saw dims {a.dim} and {b.dim}")
    na = np.linalg.norm(a.values)
    nb = np.linalg.norm(b.values)
    if na == 0.0 or nb == 0.0:
        raise ZeroVectorError("cosine similarity is undefined for zero vectors")
    sim = float(np.dot(a.values, b.values) / (na * nb))
    return max(-1.0, min(1.0, sim))


def l2_normalize(v: EmbeddingVector) -> EmbeddingVector:
    """Unit-norm copy of v with the normalized flag set."""
    norm = np.linalg.norm(v.values)
    if norm == 0.0:
        raise ZeroVectorError("cannot normalize a zero vector")
    return EmbeddingVector(v.values / norm, normalized=True)

"""On-disk embedding interchange (MVRE format) and token bundle sidecars.

MVRE layout, little-endian throughout:

    magic   4 bytes  0x4D 0x56 0x52 0x45 ("MVRE")
    version u16      = 1
    flags   u16      bit0 = vectors are unit-normalized
    dim     u32
    count   u64
    then `count` records, each:
    id_len  u16
    id      id_len UTF-8 bytes
    vector  dim float32 values

Records are serialized in lexicographic id order so two writes of the same
store are byte-identical. Vectors are stored as float32; readers widen to
float64 for arithmetic, which is lossless.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, DimMismatchError, FormatError
from .vectors import EmbeddingVector

MAGIC = b"MVRE"
VERSION = 1
FLAG_NORMALIZED = 0x0001
_HEADER = struct.Struct("<4sHHIQ")  # magic, version, flags, dim, count


@dataclass(frozen=True)
class StoreManifest:
    dim: int
    count: int
    normalized: bool
    source_model: str = ""


class EmbeddingStore:
    """In-memory collection of float32 embedding vectors keyed by id.

    Immutable by convention once populated/loaded; concurrent readers are
    safe. The ``normalized`` flag is a store-wide statement recorded in the
    file header, not re-verified per vector on load.
    """

    def __init__(self, dim: int, normalized: bool = False, source_model: str = ""):
        if dim < 1:
            raise ValueError(f"dim must be positive, got {dim}")
        self.dim = int(dim)
        self.normalized = bool(normalized)
        self.source_model = source_model
        self._vectors: dict[str, np.ndarray] = {}

    def add(self, vec_id: str, values) -> None:
        if not vec_id:
            raise ValueError("vector id must be nonempty")
        if vec_id in self._vectors:
            raise ValueError(f"duplicate vector id {vec_id!r}")
        arr = np.asarray(values, dtype=np.float32)
        if arr.ndim != 1 or arr.shape[0] != self.dim:
            raise DimMismatchError(
                f"vector {vec_id!r} has shape {arr.shape}, store dim is {self.dim}"
            )
        if not np.all(np.isfinite(arr)):
            raise DataError(f"vector {vec_id!r} contains NaN/Inf")
        arr.setflags(write=False)
        self._vectors[vec_id] = arr

    def get(self, vec_id: str) -> np.ndarray:
        """Raw float32 values for an id (read-only view)."""
        return self._vectors[vec_id]

    def vector(self, vec_id: str) -> EmbeddingVector:
        """The stored values widened to float64, ready for arithmetic."""
        return EmbeddingVector(self._vectors[vec_id], normalized=self.normalized)

    def ids(self) -> list[str]:
        """All ids in lexicographic order (the serialization order)."""
        return sorted(self._vectors)

    @property
    def manifest(self) -> StoreManifest:
        return StoreManifest(
            dim=self.dim,
            count=len(self._vectors),
            normalized=self.normalized,
            source_model=self.source_model,
        )

    def __len__(self) -> int:
        return len(self._vectors)

    def __contains__(self, vec_id: str) -> bool:
        return vec_id in self._vectors

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingStore):
            return NotImplemented
        if self.dim != other.dim or self.normalized != other.normalized:
            return False
        if set(self._vectors) != set(other._vectors):
            return False
        return all(
            np.array_equal(self._vectors[k], other._vectors[k]) for k in self._vectors
        )


def write_store(store: EmbeddingStore, path) -> None:
    """Serialize a store to MVRE. Two writes of one store are byte-identical."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    flags = FLAG_NORMALIZED if store.normalized else 0
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, flags, store.dim, len(store)))
        for vec_id in store.ids():
            id_bytes = vec_id.encode("utf-8")
            if len(id_bytes) > 0xFFFF:
                raise ValueError(f"id {vec_id!r} exceeds 65535 UTF-8 bytes")
            fh.write(struct.pack("<H", len(id_bytes)))
            fh.write(id_bytes)
            fh.write(store.get(vec_id).tobytes())


def read_store(path) -> EmbeddingStore:
    """Parse an MVRE file, validating structure and payload.

    Raises FormatError for structural problems (bad magic, unsupported
    version, truncation, duplicate ids, trailing bytes) and DataError for
    non-finite payload values.
    """
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: file shorter than the {_HEADER.size}-byte header")
    magic, version, flags, dim, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic bytes {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if dim < 1:
        raise FormatError(f"{path}: non-positive dim {dim}")

    store = EmbeddingStore(dim=dim, normalized=bool(flags & FLAG_NORMALIZED))
    offset = _HEADER.size
    vec_bytes = 4 * dim
    for i in range(count):
        if offset + 2 > len(data):
            raise FormatError(f"{path}: truncated at record {i} (id length)")
        (id_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        if offset + id_len + vec_bytes > len(data):
            raise FormatError(f"{path}: truncated at record {i}")
        try:
            vec_id = data[offset : offset + id_len].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{path}: record {i} id is not valid UTF-8") from exc
        offset += id_len
        values = np.frombuffer(data, dtype="<f4", count=dim, offset=offset)
        offset += vec_bytes
        if not np.all(np.isfinite(values)):
            raise DataError(f"{path}: vector {vec_id!r} contains NaN/Inf")
        if vec_id in store:
            raise FormatError(f"{path}: duplicate id {vec_id!r}")
        if not vec_id:
            raise FormatError(f"{path}: record {i} has an empty id")
        store.add(vec_id, values)
    if offset != len(data):
        raise FormatError(f"{path}: {len(data) - offset} trailing bytes after records")
    return store


@dataclass(frozen=True)
class TokenBundle:
    """Per-caption word list paired with ids into a token embedding store.

    Token store ids follow the ``<caption_id>#<index>`` convention so the
    heavy float data stays binary while this sidecar stays human-readable.
    """

    caption_id: str
    words: tuple[str, ...]
    token_store_ids: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "words", tuple(self.words))
        object.__setattr__(self, "token_store_ids", tuple(self.token_store_ids))
        if len(self.words) != len(self.token_store_ids):
            raise ValueError(
                f"bundle {self.caption_id!r}: {len(self.words)} words vs "
                f"{len(self.token_store_ids)} token ids"
            )


def token_id(caption_id: str, index: int) -> str:
    return f"{caption_id}#{index}"


def make_bundle(caption_id: str, words: list[str]) -> TokenBundle:
    return TokenBundle(
        caption_id=caption_id,
        words=tuple(words),
        token_store_ids=tuple(token_id(caption_id, i) for i in range(len(words))),
    )


def write_token_bundles(bundles: list[TokenBundle], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for b in bundles:
            fh.write(
                json.dumps(
                    {
                        "caption_id": b.caption_id,
                        "words": list(b.words),
                        "token_store_ids": list(b.token_store_ids),
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def read_token_bundles(path) -> list[TokenBundle]:
    bundles = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            bundles.append(
                TokenBundle(
                    caption_id=str(obj["caption_id"]),
                    words=tuple(obj["words"]),
                    token_store_ids=tuple(obj["token_store_ids"]),
                )
            )
    return bundles

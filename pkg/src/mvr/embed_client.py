"""Client for the remote embedding service.

Wire contract (all JSON over HTTP):

    POST {endpoint}/embed/text    {"texts": [...]}
        -> {"dim": d, "vectors": [[...], ...]}          one vector per text
    POST {endpoint}/embed/tokens  {"texts": [...]}
        -> {"dim": d, "results": [{"words": [...], "vectors": [[...], ...]}]}

The default endpoint comes from the MVR_EMBED_ENDPOINT environment variable.
Batches may be issued concurrently (bounded, default 8 in flight); results
are reassembled by request index, never by arrival order.
"""
from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import requests

from .errors import DimMismatchError, ServiceError
from .vectors import EmbeddingVector

ENDPOINT_ENV = "MVR_EMBED_ENDPOINT"
DEFAULT_BATCH_SIZE = 64
DEFAULT_MAX_IN_FLIGHT = 8


def resolve_endpoint(endpoint: str | None = None) -> str:
    resolved = endpoint or os.environ.get(ENDPOINT_ENV, "")
    if not resolved:
        raise ServiceError(
            f"no embedding endpoint configured (set {ENDPOINT_ENV} or pass one)"
        )
    return resolved.rstrip("/")


def _post_json(url: str, payload: dict, retries: int, timeout: float) -> dict:
    """POST with simple backoff; raises ServiceError carrying retry metadata."""
    last_exc = None
    last_status = None
    attempts = 0
    for attempt in range(retries + 1):
        attempts = attempt + 1
        try:
            resp = requests.post(url, json=payload, timeout=timeout)
            last_status = resp.status_code
            if resp.status_code == 200:
                return resp.json()
            last_exc = RuntimeError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        except requests.RequestException as exc:
            last_exc = exc
        if attempt < retries:
            time.sleep(min(0.2 * 2**attempt, 2.0))
    raise ServiceError(
        f"request to {url} failed after {attempts} attempts: {last_exc}",
        attempts=attempts,
        last_status=last_status,
    )


def _parse_vectors(body: dict, n_expected: int, url: str) -> tuple[int, list[list[float]]]:
    if not isinstance(body, dict) or "vectors" not in body or "dim" not in body:
        raise ServiceError(f"{url}: malformed response body (need dim + vectors)")
    vectors = body["vectors"]
    dim = int(body["dim"])
    if len(vectors) != n_expected:
        raise ServiceError(
            f"{url}: got {len(vectors)} vectors for {n_expected} inputs"
        )
    for vec in vectors:
        if len(vec) != dim:
            raise ServiceError(f"{url}: vector length {len(vec)} != dim {dim}")
    return dim, vectors


def embed_remote(
    texts: list[str],
    endpoint: str | None = None,
    expected_dim: int | None = None,
    batch_size: int = DEFAULT_BATCH_SIZE,
    max_in_flight: int = DEFAULT_MAX_IN_FLIGHT,
    retries: int = 2,
    timeout: float = 30.0,
) -> list[EmbeddingVector]:
    """Embed texts through the remote service, order-preserving.

    Raises ServiceError on transport/shape failures and DimMismatchError when
    the service dim disagrees with ``expected_dim`` (e.g. a configured store).
    """
    if not texts:
        raise ValueError("embed_remote requires a nonempty text list")
    base = resolve_endpoint(endpoint)
    url = base + "/embed/text"

    batches = [texts[i : i + batch_size] for i in range(0, len(texts), batch_size)]

    def fetch(batch: list[str]) -> tuple[int, list[list[float]]]:
        body = _post_json(url, {"texts": batch}, retries=retries, timeout=timeout)
        return _parse_vectors(body, len(batch), url)

    if len(batches) == 1:
        results = [fetch(batches[0])]
    else:
        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            results = list(pool.map(fetch, batches))

    dims = {dim for dim, _ in results}
    if len(dims) != 1:
        raise ServiceError(f"{url}: inconsistent dims across batches: {sorted(dims)}")
    dim = dims.pop()
    if expected_dim is not None and dim != expected_dim:
        raise DimMismatchError(
            f"service returned dim {dim}, configured store expects {expected_dim}"
        )

    out = []
    for _, vectors in results:
        for vec in vectors:
            out.append(EmbeddingVector(np.asarray(vec, dtype=np.float64)))
    return out


def embed_tokens_remote(
    texts: list[str],
    endpoint: str | None = None,
    retries: int = 2,
    timeout: float = 30.0,
) -> list[tuple[list[str], list[EmbeddingVector]]]:
    """Per-text word lists and word vectors from the /embed/tokens route."""
    if not texts:
        raise ValueError("embed_tokens_remote requires a nonempty text list")
    base = resolve_endpoint(endpoint)
    url = base + "/embed/tokens"
    body = _post_json(url, {"texts": texts}, retries=retries, timeout=timeout)
    if not isinstance(body, dict) or "results" not in body or "dim" not in body:
        raise ServiceError(f"{url}: malformed response body (need dim + results)")
    results = body["results"]
    dim = int(body["dim"])
    if len(results) != len(texts):
        raise ServiceError(f"{url}: got {len(results)} results for {len(texts)} inputs")
    out = []
    for entry in results:
        words = [str(w) for w in entry["words"]]
        vectors = entry["vectors"]
        if len(words) != len(vectors):
            raise ServiceError(f"{url}: words/vectors length mismatch")
        vecs = []
        for vec in vectors:
            if len(vec) != dim:
                raise ServiceError(f"{url}: token vector length {len(vec)} != dim {dim}")
            vecs.append(EmbeddingVector(np.asarray(vec, dtype=np.float64)))
        out.append((words, vecs))
    return out

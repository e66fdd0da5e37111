"""Conformance checks for the /embed HTTP contract.

Any service claiming to implement the embedding wire contract (the bundled
mock, the exporter service, or a production deployment) should pass
``check_embed_contract`` against its base URL. Returns a list of failure
descriptions; empty means conformant.
"""
from __future__ import annotations

import requests


def _post(base: str, route: str, payload, timeout: float = 10.0):
    return requests.post(base.rstrip("/") + route, json=payload, timeout=timeout)


def check_embed_contract(endpoint: str, timeout: float = 10.0) -> list[str]:
    failures: list[str] = []
    texts = ["a man in a red coat", "a woman with a blue umbrella", "a man in a red coat"]

    # /embed/text: shape, order preservation, determinism
    resp = _post(endpoint, "/embed/text", {"texts": texts}, timeout)
    if resp.status_code != 200:
        failures.append(f"/embed/text returned HTTP {resp.status_code}")
        return failures
    body = resp.json()
    if "dim" not in body or "vectors" not in body:
        failures.append("/embed/text response missing dim or vectors")
        return failures
    dim = body["dim"]
    vectors = body["vectors"]
    if len(vectors) != len(texts):
        failures.append(f"/embed/text returned {len(vectors)} vectors for {len(texts)} texts")
    if any(len(v) != dim for v in vectors):
        failures.append("/embed/text vector lengths disagree with dim")
    if len(vectors) == 3 and vectors[0] != vectors[2]:
        failures.append("/embed/text is not deterministic for identical texts")
    if len(vectors) >= 2 and vectors[0] == vectors[1]:
        failures.append("/embed/text returned identical vectors for distinct texts")

    resp2 = _post(endpoint, "/embed/text", {"texts": [texts[1]]}, timeout)
    if resp2.status_code != 200:
        failures.append(f"/embed/text single-item request returned HTTP {resp2.status_code}")
    else:
        single = resp2.json()["vectors"]
        if len(single) != 1 or single[0] != vectors[1]:
            failures.append("/embed/text batch and single results disagree (order not preserved)")

    # /embed/tokens: per-text words + vectors
    resp = _post(endpoint, "/embed/tokens", {"texts": texts[:2]}, timeout)
    if resp.status_code != 200:
        failures.append(f"/embed/tokens returned HTTP {resp.status_code}")
    else:
        body = resp.json()
        if "dim" not in body or "results" not in body:
            failures.append("/embed/tokens response missing dim or results")
        else:
            results = body["results"]
            if len(results) != 2:
                failures.append(f"/embed/tokens returned {len(results)} results for 2 texts")
            for i, entry in enumerate(results):
                words = entry.get("words")
                vecs = entry.get("vectors")
                if not words or not vecs or len(words) != len(vecs):
                    failures.append(f"/embed/tokens result {i} has misaligned words/vectors")
                elif any(len(v) != body["dim"] for v in vecs):
                    failures.append(f"/embed/tokens result {i} vector lengths disagree with dim")

    # malformed requests are rejected, not crashed on
    for payload in ({"texts": []}, {}, {"texts": "not a list"}):
        resp = _post(endpoint, "/embed/text", payload, timeout)
        if resp.status_code != 400:
            failures.append(
                f"/embed/text accepted malformed payload {payload!r} (HTTP {resp.status_code})"
            )
    return failures

"""Deterministic in-process HTTP servers standing in for the embedding
service and the chat-completion providers.

Vectors are hash-derived (same text -> same vector, any process), responses
count requests per route, and faults can be scripted per test to exercise
retry and error paths.
"""
from __future__ import annotations

import hashlib
import json
import re
import threading
from collections import defaultdict
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

MOCK_DIM = 16


def hash_unit_vector(text: str, dim: int = MOCK_DIM) -> np.ndarray:
    """Unit vector derived from a text hash; the mock services' featurizer."""
    seed = int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim)
    return (v / np.linalg.norm(v)).astype(np.float32)


def split_words(text: str) -> list[str]:
    return [w for w in re.findall(r"[A-Za-z0-9']+", text.lower()) if w]


def embed_text(text: str, dim: int = MOCK_DIM) -> np.ndarray:
    """Sentence vector = normalized mean of per-word hash vectors."""
    words = split_words(text)
    if not words:
        return hash_unit_vector(text, dim)
    mean = np.mean([hash_unit_vector(w, dim) for w in words], axis=0)
    norm = np.linalg.norm(mean)
    if norm == 0:
        return hash_unit_vector(text, dim)
    return (mean / norm).astype(np.float32)


class _CountingServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        self.request_counts = defaultdict(int)
        self.faults = []  # consumed front-to-back, each applies to one request
        self.lock = threading.Lock()

    def next_fault(self):
        with self.lock:
            return self.faults.pop(0) if self.faults else None

    def count(self, route: str) -> None:
        with self.lock:
            self.request_counts[route] += 1

    @property
    def total_requests(self) -> int:
        with self.lock:
            return sum(self.request_counts.values())


class _BaseHandler(BaseHTTPRequestHandler):
    def log_message(self, fmt, *args):
        pass

    def read_body(self):
        length = int(self.headers.get("Content-Length", 0))
        raw = self.rfile.read(length)
        try:
            return json.loads(raw)
        except json.JSONDecodeError:
            return None

    def send_json(self, obj, status=200):
        data = json.dumps(obj).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def send_error_json(self, status, message):
        self.send_json({"error": message}, status=status)


class EmbedHandler(_BaseHandler):
    """Implements the /embed wire contract with hash-derived vectors."""

    def do_POST(self):
        self.server.count(self.path)
        fault = self.server.next_fault()
        if fault == "http500":
            self.send_error_json(500, "injected failure")
            return

        body = self.read_body()
        if body is None or not isinstance(body, dict):
            self.send_error_json(400, "body must be a JSON object")
            return
        texts = body.get("texts")
        if not isinstance(texts, list) or not texts or not all(isinstance(t, str) for t in texts):
            self.send_error_json(400, "texts must be a nonempty list of strings")
            return

        dim = self.server.dim
        if self.path == "/embed/text":
            vectors = [embed_text(t, dim).tolist() for t in texts]
            if fault == "wrong_count":
                vectors = vectors[:-1]
            self.send_json({"dim": dim, "vectors": vectors})
        elif self.path == "/embed/tokens":
            results = []
            for t in texts:
                words = split_words(t)
                results.append(
                    {
                        "words": words,
                        "vectors": [hash_unit_vector(w, dim).tolist() for w in words],
                    }
                )
            self.send_json({"dim": dim, "results": results})
        else:
            self.send_error_json(404, f"unknown route {self.path}")


_SHAPES = ("json", "dash", "numbered", "bracket_dash", "quoted_numbered")


def format_reformulations(texts: list[str], shape: str) -> str:
    if shape == "json":
        return json.dumps(texts)
    if shape == "dash":
        return "\n".join(f"- {t}" for t in texts)
    if shape == "numbered":
        return "\n".join(f"{i + 1}. {t}" for i, t in enumerate(texts))
    if shape == "bracket_dash":
        return "[\n" + "\n".join(f"- {t}" for t in texts) + "\n]"
    if shape == "quoted_numbered":
        return "\n".join(f'{i + 1}) "{t}"' for i, t in enumerate(texts))
    raise ValueError(shape)


def mock_reformulations(caption: str, keywords: list[str] | None, count: int, model: str) -> list[str]:
    """Deterministic rewrites that keep every caption word (hence keywords)."""
    prefixes = (
        "Seen here,", "In this view,", "From another angle,", "Notably,",
        "In the picture,", "As captured,",
    )
    out = []
    for i in range(count):
        prefix = prefixes[(i + len(model)) % len(prefixes)]
        out.append(f"{prefix} {caption} (variant {i + 1} by {model})")
    return out


class ChatHandler(_BaseHandler):
    """Chat-completions stand-in emitting parseable reformulation lists."""

    def do_POST(self):
        self.server.count(self.path)
        if self.path != "/v1/chat/completions":
            self.send_error_json(404, f"unknown route {self.path}")
            return
        fault = self.server.next_fault()
        if fault == "http500":
            self.send_error_json(500, "injected failure")
            return
        if fault == "malformed":
            self.send_json({"choices": [{"message": {"content": ""}}]})
            return

        body = self.read_body()
        if body is None or "messages" not in body:
            self.send_error_json(400, "bad chat request")
            return
        system = next((m["content"] for m in body["messages"] if m["role"] == "system"), "")
        user = next((m["content"] for m in body["messages"] if m["role"] == "user"), "")

        count_match = re.search(r"Give me (\d+) different captions", system)
        count = int(count_match.group(1)) if count_match else 15
        caption_match = re.search(r"Caption: (.*?)(?:\nKeywords:|$)", user, re.DOTALL)
        caption = caption_match.group(1).strip() if caption_match else user
        keywords = None
        kw_match = re.search(r"Keywords: (.+)$", user, re.DOTALL)
        if kw_match:
            keywords = re.findall(r"'([^']*)'", kw_match.group(1))

        texts = mock_reformulations(caption, keywords, count, body.get("model", ""))
        if fault == "short_list":
            texts = texts[: max(1, count // 2)]
        if fault == "drop_keyword" and keywords:
            # corrupt half the variants so key-consistency validation has work
            texts = [
                t.replace(keywords[0], keywords[0] + "X") if i % 2 else t
                for i, t in enumerate(texts)
            ]
        digest = hashlib.sha256((caption + body.get("model", "")).encode()).digest()
        shape = _SHAPES[digest[0] % len(_SHAPES)]
        self.send_json({"choices": [{"message": {"content": format_reformulations(texts, shape)}}]})


class MockServer:
    """A mock service running on an OS-assigned port in a daemon thread."""

    def __init__(self, handler, dim: int = MOCK_DIM):
        self.server = _CountingServer(("127.0.0.1", 0), handler)
        self.server.dim = dim
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()

    @property
    def url(self) -> str:
        host, port = self.server.server_address
        return f"http://{host}:{port}"

    @property
    def request_counts(self):
        return self.server.request_counts

    @property
    def total_requests(self) -> int:
        return self.server.total_requests

    def add_fault(self, fault: str) -> None:
        self.server.faults.append(fault)

    def shutdown(self) -> None:
        self.server.shutdown()
        self.server.server_close()

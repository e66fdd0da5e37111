"""LLM reformulation: prompt rendering, response parsing, keyword-consistency
validation, an append-only response cache, and batch orchestration across
multiple chat providers.

One chat request yields all requested variants for a (caption, strategy,
provider) triple; key-consistent outputs that fail the whole-word keyword
check are dropped rather than re-prompted.
"""
from __future__ import annotations

import ast
import hashlib
import json
import logging
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import requests

from .errors import ConfigError, ParseError, ProviderError, ServiceError
from .records import DIVERSE, KEY_CONSISTENT, CaptionRecord, ReformulationSet

log = logging.getLogger(__name__)

LLM_ENDPOINT_ENV = "MVR_LLM_ENDPOINT"
LLM_API_KEY_ENV = "MVR_LLM_API_KEY"
DEFAULT_REQUESTED_COUNT = 15
DEFAULT_TEMPERATURE = 0.01


@dataclass(frozen=True)
class PromptTemplate:
    """A system/user message pair with {caption}, {keywords}, {count} slots."""

    strategy: str
    system_text: str
    user_text_pattern: str
    requested_count: int = DEFAULT_REQUESTED_COUNT

    def __post_init__(self):
        if "{caption}" not in self.user_text_pattern:
            raise ConfigError("user text pattern must contain the {caption} slot")
        if self.strategy == KEY_CONSISTENT and "{keywords}" not in self.user_text_pattern:
            raise ConfigError("key-consistent template must contain the {keywords} slot")
        if self.requested_count < 1:
            raise ConfigError("requested_count must be positive")


_KEY_SYSTEM = (
    "Instructions:\n"
    "  Suppose you now have a picture of a pedestrian, I will give you a caption "
    "and its key words list, your task is to rewrite the caption.\n"
    "  - Contains every key word must be used, but can change order and replace "
    "other words in a similar meaning.\n"
    "  - Give me {count} different captions and return them in a list. "
    "Give me the list without any statement else."
)

_DIVERSE_SYSTEM = (
    "Instructions:\n"
    "  Suppose you now have a picture of a pedestrian, I will give you a caption, "
    "your task is to rewrite the caption.\n"
    "  - The rewrite caption must contain the content mentioned in the original caption.\n"
    "  - You may use your imagination, but make sure that what you rewrite is not "
    "beyound real-world logic.\n"
    "  - Give me {count} different captions and return them in a list. "
    "Give me the list without any statement else."
)

DEFAULT_TEMPLATES: dict[str, PromptTemplate] = {
    KEY_CONSISTENT: PromptTemplate(
        strategy=KEY_CONSISTENT,
        system_text=_KEY_SYSTEM,
        user_text_pattern="Caption: {caption}\nKeywords: {keywords}",
    ),
    DIVERSE: PromptTemplate(
        strategy=DIVERSE,
        system_text=_DIVERSE_SYSTEM,
        user_text_pattern="Caption: {caption}",
    ),
}


def template_from_dict(obj: dict) -> PromptTemplate:
    return PromptTemplate(
        strategy=obj["strategy"],
        system_text=obj["system_text"],
        user_text_pattern=obj["user_text_pattern"],
        requested_count=int(obj.get("requested_count", DEFAULT_REQUESTED_COUNT)),
    )


def format_keywords(keywords: list[str]) -> str:
    """Quoted, comma-separated keyword list ending with a period."""
    return ", ".join(f"'{k}'" for k in keywords) + "."


def render_prompt(
    template: PromptTemplate,
    caption: str,
    keywords: list[str] | None = None,
    requested_count: int | None = None,
) -> tuple[str, str]:
    """Substitute the template slots, returning (system, user) message texts."""
    if not caption or not caption.strip():
        raise ConfigError("cannot render a prompt for an empty caption")
    if template.strategy == KEY_CONSISTENT:
        if not keywords:
            raise ConfigError("key-consistent strategy requires a keyword list")
    elif keywords is not None:
        raise ConfigError(f"strategy {template.strategy!r} does not take keywords")
    count = requested_count if requested_count is not None else template.requested_count
    system = template.system_text.replace("{count}", str(count))
    user = template.user_text_pattern.replace("{caption}", caption)
    if keywords is not None:
        user = user.replace("{keywords}", format_keywords(keywords))
    return system, user


_BULLET_RE = re.compile(r"^\s*(?:[-*•]\s+|\d+\s*[.)]\s*)")
_QUOTE_PAIRS = {('"', '"'), ("'", "'"), ("“", "”"), ("‘", "’")}


def _strip_item(line: str) -> str:
    line = line.strip()
    line = _BULLET_RE.sub("", line).strip()
    if line.endswith(","):
        line = line[:-1].rstrip()
    while len(line) >= 2 and (line[0], line[-1]) in _QUOTE_PAIRS:
        line = line[1:-1].strip()
    return line


def parse_reformulations(raw: str, expected: int) -> list[str]:
    """Extract the list of reformulated captions from a raw model response.

    Accepts a structured array of strings, dash/star-bulleted lines, or
    numbered lines (brackets around the whole block are tolerated). Raises
    ParseError when nothing parseable remains; a count different from
    ``expected`` is the caller's business (warn and use the partial set).
    """
    text = raw.strip()
    if not text:
        raise ParseError("empty response body")

    for loader in (json.loads, ast.literal_eval):
        try:
            value = loader(text)
        except (ValueError, SyntaxError):
            continue
        if isinstance(value, list) and all(isinstance(x, str) for x in value):
            items = [x.strip() for x in value if x.strip()]
            if items:
                return items
            raise ParseError("structured array contained no nonempty strings")

    body = text
    if body.startswith("[") and body.endswith("]"):
        body = body[1:-1]
    items = []
    for line in body.splitlines():
        stripped = _strip_item(line)
        if stripped in ("", "[", "]"):
            continue
        items.append(stripped)
    if not items:
        raise ParseError(f"no reformulations found in response: {raw[:120]!r}")
    return items


def validate_key_consistency(reformulation: str, keywords: list[str]) -> bool:
    """True iff every keyword occurs as a case-insensitive whole word."""
    for keyword in keywords:
        pattern = rf"(?<!\w){re.escape(keyword)}(?!\w)"
        if re.search(pattern, reformulation, flags=re.IGNORECASE) is None:
            return False
    return True


@dataclass(frozen=True)
class LlmProviderConfig:
    """One chat-completion provider (endpoint + model + decoding settings)."""

    name: str
    model: str
    endpoint: str = ""
    temperature: float = DEFAULT_TEMPERATURE
    max_retries: int = 2
    timeout: float = 60.0

    def __post_init__(self):
        if not (0.0 <= self.temperature < 2.0):
            raise ConfigError(f"temperature {self.temperature} outside [0, 2)")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")

    def resolve_endpoint(self) -> str:
        endpoint = self.endpoint or os.environ.get(LLM_ENDPOINT_ENV, "")
        if not endpoint:
            raise ConfigError(
                f"provider {self.name!r} has no endpoint (set {LLM_ENDPOINT_ENV})"
            )
        return endpoint.rstrip("/")


class ChatClient:
    """Minimal chat-completions client with bounded retries."""

    def __init__(self, api_key: str | None = None, session: requests.Session | None = None):
        self.api_key = api_key if api_key is not None else os.environ.get(LLM_API_KEY_ENV, "")
        self._session = session or requests.Session()

    def complete(self, provider: LlmProviderConfig, system_text: str, user_text: str) -> str:
        url = provider.resolve_endpoint() + "/v1/chat/completions"
        payload = {
            "model": provider.model,
            "temperature": provider.temperature,
            "messages": [
                {"role": "system", "content": system_text},
                {"role": "user", "content": user_text},
            ],
        }
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_exc = None
        last_status = None
        attempts = 0
        for attempt in range(provider.max_retries + 1):
            attempts = attempt + 1
            try:
                resp = self._session.post(
                    url, json=payload, headers=headers, timeout=provider.timeout
                )
                last_status = resp.status_code
                if resp.status_code == 200:
                    body = resp.json()
                    return str(body["choices"][0]["message"]["content"])
                last_exc = RuntimeError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
                last_exc = exc
            if attempt < provider.max_retries:
                time.sleep(min(0.2 * 2**attempt, 2.0))
        raise ServiceError(
            f"chat request to {url} failed after {attempts} attempts: {last_exc}",
            attempts=attempts,
            last_status=last_status,
        )


def cache_key(
    caption_text: str,
    strategy: str,
    keywords: list[str] | None,
    provider_name: str,
    model: str,
    temperature: float,
    requested_count: int,
) -> str:
    """Content hash identifying one reformulation request.

    The caption text is whitespace-normalized so trivial formatting changes
    do not defeat the cache.
    """
    payload = json.dumps(
        {
            "caption": " ".join(caption_text.split()),
            "strategy": strategy,
            "keywords": sorted(keywords) if keywords else [],
            "provider": provider_name,
            "model": model,
            "temperature": temperature,
            "requested_count": requested_count,
        },
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class ReformulationCache:
    """Append-only JSONL cache of validated reformulation texts.

    The file is loaded fully at startup; lookups are in-memory and appends
    are serialized. Entries carry enough metadata to rebuild sets without
    re-contacting any provider.
    """

    def __init__(self, path=None):
        self.path = Path(path) if path is not None else None
        self._entries: dict[str, dict] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            self._load()

    def _load(self) -> None:
        with open(self.path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    entry = json.loads(line)
                except json.JSONDecodeError:
                    log.warning("%s:%d: skipping corrupt cache line", self.path, lineno)
                    continue
                self._entries[entry["key"]] = entry

    def get(self, key: str) -> dict | None:
        return self._entries.get(key)

    def put(self, key: str, texts: list[str], **meta) -> None:
        entry = {"key": key, "texts": list(texts), **meta}
        with self._lock:
            if key in self._entries:
                return
            self._entries[key] = entry
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(entry, ensure_ascii=False) + "\n")
                    fh.flush()

    def entries(self) -> list[dict]:
        return list(self._entries.values())

    def __len__(self) -> int:
        return len(self._entries)


@dataclass
class ReformulationBatch:
    """Outcome of one batch run: ordered sets plus per-caption failures."""

    sets: list[ReformulationSet] = field(default_factory=list)
    failures: list[ProviderError] = field(default_factory=list)
    skipped: list[tuple[str, str, str]] = field(default_factory=list)

    def sets_for(self, source_id: str, strategy: str | None = None) -> list[ReformulationSet]:
        return [
            s
            for s in self.sets
            if s.source_id == source_id and (strategy is None or s.strategy == strategy)
        ]


def _run_one(
    caption: CaptionRecord,
    strategy: str,
    provider: LlmProviderConfig,
    template: PromptTemplate,
    keywords: list[str] | None,
    requested_count: int,
    cache: ReformulationCache,
    client: ChatClient,
) -> ReformulationSet:
    key = cache_key(
        caption.text, strategy, keywords, provider.name, provider.model,
        provider.temperature, requested_count,
    )
    cached = cache.get(key)
    if cached is not None:
        return ReformulationSet(
            source_id=caption.id,
            strategy=strategy,
            provider=provider.name,
            temperature=provider.temperature,
            texts=tuple(cached["texts"]),
        )

    system, user = render_prompt(template, caption.text, keywords, requested_count)
    texts: list[str] = []
    for attempt in range(provider.max_retries + 1):
        raw = client.complete(provider, system, user)
        try:
            items = parse_reformulations(raw, requested_count)
        except ParseError as exc:
            if attempt < provider.max_retries:
                log.warning(
                    "caption %s (%s/%s): unparseable response, retrying: %s",
                    caption.id, strategy, provider.name, exc,
                )
                continue
            raise
        if strategy == KEY_CONSISTENT:
            survivors = [t for t in items if validate_key_consistency(t, keywords)]
            if len(survivors) < len(items):
                log.info(
                    "caption %s: dropped %d/%d key-consistent variants failing "
                    "keyword containment",
                    caption.id, len(items) - len(survivors), len(items),
                )
            items = survivors
        if items:
            texts = items
            break
        if attempt < provider.max_retries:
            log.warning(
                "caption %s (%s/%s): no variants survived validation, retrying",
                caption.id, strategy, provider.name,
            )
    if not texts:
        raise ParseError(
            f"caption {caption.id!r}: no usable reformulations from {provider.name}"
        )
    if len(texts) != requested_count:
        log.warning(
            "caption %s (%s/%s): %d variants instead of %d, using partial set",
            caption.id, strategy, provider.name, len(texts), requested_count,
        )
    cache.put(
        key,
        texts,
        source_id=caption.id,
        strategy=strategy,
        provider=provider.name,
        model=provider.model,
        temperature=provider.temperature,
        requested_count=requested_count,
    )
    return ReformulationSet(
        source_id=caption.id,
        strategy=strategy,
        provider=provider.name,
        temperature=provider.temperature,
        texts=tuple(texts),
    )


def reformulate_batch(
    captions: list[CaptionRecord],
    strategies: list[str],
    providers: list[LlmProviderConfig],
    cache: ReformulationCache,
    keywords_by_caption: dict[str, list[str]] | None = None,
    templates: dict[str, PromptTemplate] | None = None,
    requested_count: int = DEFAULT_REQUESTED_COUNT,
    concurrency: int = 4,
    client: ChatClient | None = None,
) -> ReformulationBatch:
    """Reformulate every caption under every strategy and provider.

    Cached triples never hit the network. Failures are carried per caption so
    one bad caption never aborts the batch. The returned sets are ordered by
    caption, then strategy (key-consistent first), then provider, regardless
    of completion order.
    """
    if not strategies or not providers:
        raise ConfigError("need at least one strategy and one provider")
    for s in strategies:
        if s not in (KEY_CONSISTENT, DIVERSE):
            raise ConfigError(f"unknown strategy {s!r}")
    templates = templates or DEFAULT_TEMPLATES
    keywords_by_caption = keywords_by_caption or {}
    client = client or ChatClient()
    ordered_strategies = [s for s in (KEY_CONSISTENT, DIVERSE) if s in strategies]

    tasks = []  # (order index, caption, strategy, provider, keywords)
    batch = ReformulationBatch()
    for caption in captions:
        for strategy in ordered_strategies:
            keywords = None
            if strategy == KEY_CONSISTENT:
                keywords = keywords_by_caption.get(caption.id)
                if not keywords:
                    log.warning(
                        "caption %s: no keywords available, falling back to "
                        "diversity-only reformulation", caption.id,
                    )
                    batch.skipped.append((caption.id, strategy, "no keywords"))
                    continue
            for provider in providers:
                tasks.append((len(tasks), caption, strategy, provider, keywords))

    results: dict[int, ReformulationSet] = {}
    failures: dict[int, ProviderError] = {}

    def run(task):
        idx, caption, strategy, provider, keywords = task
        try:
            results[idx] = _run_one(
                caption, strategy, provider, templates[strategy], keywords,
                requested_count, cache, client,
            )
        except (ServiceError, ParseError, ConfigError) as exc:
            failures[idx] = ProviderError(
                f"caption {caption.id!r} via {provider.name!r}: {exc}",
                caption_id=caption.id,
                provider=provider.name,
                cause=exc,
            )

    if concurrency > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            list(pool.map(run, tasks))
    else:
        for task in tasks:
            run(task)

    for idx in sorted(results):
        batch.sets.append(results[idx])
    for idx in sorted(failures):
        batch.failures.append(failures[idx])
    return batch

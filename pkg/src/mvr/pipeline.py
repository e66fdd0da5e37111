"""Run configuration and assembly of evaluation inputs from artifacts.

Two ways to obtain view embeddings:
  * a data directory of precomputed stores (the synthetic generator's layout),
  * base stores + a warm reformulation cache + the remote embedding service.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .embed_client import embed_remote
from .errors import CacheMissError, ConfigError
from .evaluate import AblationFlags, PipelineInputs
from .records import (
    DIVERSE,
    KEY_CONSISTENT,
    CaptionRecord,
    CompensationConfig,
    read_captions,
)
from .reformulate import (
    DEFAULT_REQUESTED_COUNT,
    LlmProviderConfig,
    PromptTemplate,
    ReformulationCache,
    cache_key,
    template_from_dict,
)
from .store import read_store
from .synth import load_inputs


@dataclass
class RunConfig:
    """Declarative run settings, loadable from YAML with flag overrides."""

    data_dir: str | None = None
    query_store: str | None = None
    gallery_store: str | None = None
    query_captions: str | None = None
    gallery_captions: str | None = None
    sentence_store: str | None = None
    token_store: str | None = None
    token_bundles: str | None = None
    keywords_file: str | None = None
    cache: str | None = None
    output_dir: str = "out"
    seed: int = 0
    delta: float = -0.03
    requested_count: int = DEFAULT_REQUESTED_COUNT
    concurrency: int = 4
    embed_endpoint: str | None = None
    strategies: list[str] = field(default_factory=lambda: [KEY_CONSISTENT, DIVERSE])
    compensation: CompensationConfig = field(default_factory=CompensationConfig)
    flags: AblationFlags = field(
        default_factory=lambda: AblationFlags(True, True, True, True)
    )
    providers: list[LlmProviderConfig] = field(default_factory=list)
    templates: dict[str, PromptTemplate] | None = None

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        return cls.from_dict(raw, base_dir=path.parent)

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Path | None = None) -> "RunConfig":
        def resolve(p):
            if p is None or base_dir is None:
                return p
            p = Path(p)
            return str(p if p.is_absolute() else base_dir / p)

        cfg = cls()
        for name in (
            "data_dir", "query_store", "gallery_store", "query_captions",
            "gallery_captions", "sentence_store", "token_store", "token_bundles",
            "keywords_file", "cache", "output_dir",
        ):
            if name in raw:
                setattr(cfg, name, resolve(raw[name]))
        for name in ("seed", "requested_count", "concurrency"):
            if name in raw:
                setattr(cfg, name, int(raw[name]))
        if "delta" in raw:
            cfg.delta = float(raw["delta"])
        if "embed_endpoint" in raw:
            cfg.embed_endpoint = raw["embed_endpoint"]
        if "strategies" in raw:
            cfg.strategies = list(raw["strategies"])
        if "compensation" in raw:
            cfg.compensation = CompensationConfig(**raw["compensation"])
        if "flags" in raw:
            cfg.flags = AblationFlags(**raw["flags"])
        if "providers" in raw:
            cfg.providers = [LlmProviderConfig(**p) for p in raw["providers"]]
        if "templates" in raw:
            cfg.templates = {
                t["strategy"]: template_from_dict(t) for t in raw["templates"]
            }
        unknown = set(raw) - {
            "data_dir", "query_store", "gallery_store", "query_captions",
            "gallery_captions", "sentence_store", "token_store", "token_bundles",
            "keywords_file", "cache", "output_dir", "seed", "delta",
            "requested_count", "concurrency", "embed_endpoint", "strategies",
            "compensation", "flags", "providers", "templates",
        }
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cfg

    def validate_paths(self, *names: str) -> None:
        for name in names:
            value = getattr(self, name)
            if value is None:
                raise ConfigError(f"config is missing required path {name!r}")
            if not Path(value).exists():
                raise ConfigError(f"{name} path does not exist: {value}")


def _strategy_sets_from_cache(
    caption: CaptionRecord,
    strategy: str,
    cache: ReformulationCache,
    providers: list[LlmProviderConfig],
    keywords_by_caption: dict[str, list[str]],
    requested_count: int,
) -> list[str] | None:
    """Texts for one caption x strategy, provider order, or None on miss."""
    texts: list[str] = []
    keywords = keywords_by_caption.get(caption.id) if strategy == KEY_CONSISTENT else None
    if strategy == KEY_CONSISTENT and not keywords:
        return []  # keyword extraction yielded nothing: degrade, not a miss
    for provider in providers:
        key = cache_key(
            caption.text, strategy, keywords, provider.name, provider.model,
            provider.temperature, requested_count,
        )
        entry = cache.get(key)
        if entry is None:
            return None
        texts.extend(entry["texts"])
    return texts


def views_from_cache(
    captions: list[CaptionRecord],
    strategies: list[str],
    cache: ReformulationCache,
    providers: list[LlmProviderConfig],
    keywords_by_caption: dict[str, list[str]] | None = None,
    requested_count: int = DEFAULT_REQUESTED_COUNT,
    embed_endpoint: str | None = None,
    expected_dim: int | None = None,
) -> dict[str, dict[str, np.ndarray]]:
    """Embed every caption's cached reformulations through the embed service.

    Raises CacheMissError (listing caption ids) when the cache lacks entries
    for an enabled strategy.
    """
    keywords_by_caption = keywords_by_caption or {}
    texts_by: dict[str, dict[str, list[str]]] = {s: {} for s in strategies}
    missing: list[str] = []
    for caption in captions:
        for strategy in strategies:
            texts = _strategy_sets_from_cache(
                caption, strategy, cache, providers, keywords_by_caption,
                requested_count,
            )
            if texts is None:
                missing.append(f"{strategy}:{caption.id}")
            else:
                texts_by[strategy][caption.id] = texts
    if missing:
        raise CacheMissError(
            f"reformulation cache is missing {len(missing)} entries",
            missing_ids=missing,
        )

    # one flat embed call per strategy, then split back per caption
    views: dict[str, dict[str, np.ndarray]] = {}
    for strategy in strategies:
        flat: list[str] = []
        spans: list[tuple[str, int, int]] = []
        for caption in captions:
            texts = texts_by[strategy][caption.id]
            spans.append((caption.id, len(flat), len(flat) + len(texts)))
            flat.extend(texts)
        if flat:
            vectors = embed_remote(flat, endpoint=embed_endpoint, expected_dim=expected_dim)
            matrix = np.stack([v.values for v in vectors])
        else:
            matrix = np.zeros((0, expected_dim or 0))
        views[strategy] = {
            cid: matrix[lo:hi] for cid, lo, hi in spans
        }
    return views


def _base_side(store_path: str, captions_path: str):
    store = read_store(store_path)
    captions = read_captions(captions_path)
    pid_by_id = {c.id: c.person_id for c in captions}
    ids = tuple(store.ids())
    missing = [i for i in ids if i not in pid_by_id]
    if missing:
        raise ConfigError(f"captions at {captions_path} missing ids {missing[:5]}")
    base = np.stack([store.get(i) for i in ids]).astype(np.float64)
    return ids, tuple(pid_by_id[i] for i in ids), base, store.dim, captions


def load_run_inputs(config: RunConfig, cache: ReformulationCache | None = None) -> PipelineInputs:
    """Build PipelineInputs from a data directory or stores + cache + service."""
    if config.data_dir:
        return load_inputs(config.data_dir, config=config.compensation)

    config.validate_paths(
        "query_store", "gallery_store", "query_captions", "gallery_captions"
    )
    q_ids, q_pids, q_base, dim, q_captions = _base_side(
        config.query_store, config.query_captions
    )
    g_ids, g_pids, g_base, _, g_captions = _base_side(
        config.gallery_store, config.gallery_captions
    )

    if cache is None:
        cache = ReformulationCache(config.cache)
    keywords_by_caption = load_keywords_file(config.keywords_file)

    query_views = views_from_cache(
        q_captions, config.strategies, cache, config.providers,
        keywords_by_caption, config.requested_count,
        embed_endpoint=config.embed_endpoint, expected_dim=dim,
    )
    gallery_views = views_from_cache(
        g_captions, config.strategies, cache, config.providers,
        keywords_by_caption, config.requested_count,
        embed_endpoint=config.embed_endpoint, expected_dim=dim,
    )
    return PipelineInputs(
        query_ids=q_ids,
        query_pids=q_pids,
        query_base=q_base,
        gallery_ids=g_ids,
        gallery_pids=g_pids,
        gallery_base=g_base,
        query_views=query_views,
        gallery_views=gallery_views,
        config=config.compensation,
    )


def load_keywords_file(path) -> dict[str, list[str]]:
    """Keyword lists per caption id from the keywords command's JSONL output."""
    import json

    if path is None or not Path(path).exists():
        return {}
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                obj = json.loads(line)
                out[obj["caption_id"]] = list(obj["keywords"])
    return out

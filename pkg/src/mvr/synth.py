"""Synthetic latent-recovery benchmark data.

Each identity owns a latent unit vector; queries, gallery items and view
embeddings are unit-norm perturbations of it. Averaging many independently
perturbed views cancels the noise and recovers the latent direction, so
compensation measurably improves ranking on this data. Identity latents are
drawn around a shared direction to make identities confusable, the regime the
compensation is supposed to help in.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError
from .records import DIVERSE, KEY_CONSISTENT, CaptionRecord, CompensationConfig, GALLERY_CAPTION, QUERY
from .records import write_captions
from .evaluate import PipelineInputs
from .store import EmbeddingStore, read_store, write_store

VIEW_STORE_NAMES = {
    ("query", KEY_CONSISTENT): "query_views_key.mvre",
    ("query", DIVERSE): "query_views_diverse.mvre",
    ("gallery", KEY_CONSISTENT): "gallery_views_key.mvre",
    ("gallery", DIVERSE): "gallery_views_diverse.mvre",
}


@dataclass(frozen=True)
class EchoParams:
    """Generation knobs; defaults give a baseline hard enough to improve on.

    Identity latents scatter around a shared direction by a per-identity
    radius drawn log-uniformly from [spread_lo, spread_hi], so some identities
    are nearly interchangeable and others easy: every noise level has a
    subpopulation whose ranking it decides.
    """

    dim: int = 24
    n_identities: int = 48
    queries_per_id: int = 1
    gallery_per_id: int = 2
    noise: float = 0.5            # perturbation length for queries and views
    gallery_noise: float = 0.5
    spread_lo: float = 0.55       # latent scatter around the shared direction
    spread_hi: float = 0.55
    views_per_strategy: int = 15


def _unit_rows(rng: np.random.Generator, *shape: int) -> np.ndarray:
    v = rng.standard_normal(shape)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def perturb(rng: np.random.Generator, latent: np.ndarray, eps: float) -> np.ndarray:
    """Unit-norm perturbation of latent directions: normalize(u + eps*g).

    ``latent`` may be a single vector or a batch (..., dim); one independent
    unit perturbation direction is drawn per row.
    """
    v = latent + eps * _unit_rows(rng, *latent.shape)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def make_echo_inputs(
    seed: int,
    params: EchoParams | None = None,
    config: CompensationConfig | None = None,
) -> PipelineInputs:
    """Deterministic synthetic retrieval instance for a given seed."""
    params = params or EchoParams()
    config = config or CompensationConfig()
    rng = np.random.default_rng(seed)
    dim, n_id = params.dim, params.n_identities
    n_views = params.views_per_strategy

    if params.spread_hi < params.spread_lo:
        raise ValueError("spread_hi must be >= spread_lo")
    shared = _unit_rows(rng, dim)
    if params.spread_hi > params.spread_lo:
        radii = np.exp(
            rng.uniform(np.log(params.spread_lo), np.log(params.spread_hi), size=n_id)
        )
    else:
        radii = np.full(n_id, params.spread_lo)
    latents = shared[None, :] + radii[:, None] * _unit_rows(rng, n_id, dim)
    latents /= np.linalg.norm(latents, axis=1, keepdims=True)
    pids = [f"p{p:04d}" for p in range(n_id)]

    def side(prefix, per_id, base_eps):
        idx = np.repeat(np.arange(n_id), per_id)
        ids = tuple(
            f"{prefix}_{pids[p]}_{k:02d}" for p in range(n_id) for k in range(per_id)
        )
        base = perturb(rng, latents[idx], base_eps)
        views = {}
        for strategy in (KEY_CONSISTENT, DIVERSE):
            block = perturb(
                rng, np.repeat(latents[idx], n_views, axis=0), params.noise
            ).reshape(len(ids), n_views, dim)
            views[strategy] = {vid: block[i] for i, vid in enumerate(ids)}
        return ids, tuple(pids[p] for p in idx), base, views

    query_ids, query_pids, query_base, query_views = side(
        "q", params.queries_per_id, params.noise
    )
    gallery_ids, gallery_pids, gallery_base, gallery_views = side(
        "g", params.gallery_per_id, params.gallery_noise
    )

    return PipelineInputs(
        query_ids=query_ids,
        query_pids=query_pids,
        query_base=query_base,
        gallery_ids=gallery_ids,
        gallery_pids=gallery_pids,
        gallery_base=gallery_base,
        query_views=query_views,
        gallery_views=gallery_views,
        config=config,
    )


def view_id(source_id: str, index: int) -> str:
    return f"{source_id}#v{index:03d}"


def _views_to_store(views: dict[str, np.ndarray], dim: int) -> EmbeddingStore:
    store = EmbeddingStore(dim=dim)
    for source_id in sorted(views):
        block = views[source_id]
        for i in range(block.shape[0]):
            store.add(view_id(source_id, i), block[i])
    return store


def _views_from_store(store: EmbeddingStore) -> dict[str, np.ndarray]:
    grouped: dict[str, list[tuple[int, np.ndarray]]] = {}
    for vid in store.ids():
        source_id, sep, suffix = vid.rpartition("#v")
        if not sep:
            raise FormatError(f"view store id {vid!r} lacks the '#v' suffix")
        grouped.setdefault(source_id, []).append((int(suffix), store.get(vid)))
    return {
        sid: np.stack([vec for _, vec in sorted(pairs)]).astype(np.float64)
        for sid, pairs in grouped.items()
    }


def write_inputs(inputs: PipelineInputs, out_dir) -> Path:
    """Persist pipeline inputs as MVRE stores + caption JSONL files."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    for name, ids, pids, rows, kind in (
        ("query", inputs.query_ids, inputs.query_pids, inputs.query_base, QUERY),
        ("gallery", inputs.gallery_ids, inputs.gallery_pids, inputs.gallery_base, GALLERY_CAPTION),
    ):
        store = EmbeddingStore(dim=inputs.dim)
        for i, vec_id in enumerate(ids):
            store.add(vec_id, rows[i])
        write_store(store, out_dir / f"{name}_base.mvre")
        write_captions(
            [
                CaptionRecord(id=i, person_id=p, text=f"synthetic {i}", kind=kind)
                for i, p in zip(ids, pids)
            ],
            out_dir / f"{name}_captions.jsonl",
        )

    for (side, strategy), filename in VIEW_STORE_NAMES.items():
        views = inputs.query_views if side == "query" else inputs.gallery_views
        write_store(_views_to_store(views.get(strategy, {}), inputs.dim), out_dir / filename)

    (out_dir / "dataset.json").write_text(
        json.dumps(
            {
                "dim": inputs.dim,
                "queries": len(inputs.query_ids),
                "gallery": len(inputs.gallery_ids),
                "config": inputs.config.snapshot(),
            },
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    return out_dir


def load_inputs(data_dir, config: CompensationConfig | None = None) -> PipelineInputs:
    """Load pipeline inputs previously written by write_inputs."""
    from .records import read_captions

    data_dir = Path(data_dir)
    sides = {}
    for name in ("query", "gallery"):
        store = read_store(data_dir / f"{name}_base.mvre")
        captions = read_captions(data_dir / f"{name}_captions.jsonl")
        pid_by_id = {c.id: c.person_id for c in captions}
        ids = tuple(store.ids())
        missing = [i for i in ids if i not in pid_by_id]
        if missing:
            raise FormatError(f"{name} captions missing ids: {missing[:5]}")
        sides[name] = (
            ids,
            tuple(pid_by_id[i] for i in ids),
            np.stack([store.get(i) for i in ids]).astype(np.float64),
        )

    views = {"query": {}, "gallery": {}}
    for (side, strategy), filename in VIEW_STORE_NAMES.items():
        path = data_dir / filename
        if path.exists():
            views[side][strategy] = _views_from_store(read_store(path))

    if config is None:
        meta_path = data_dir / "dataset.json"
        if meta_path.exists():
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
            config = CompensationConfig(**meta.get("config", {}))
        else:
            config = CompensationConfig()

    q_ids, q_pids, q_base = sides["query"]
    g_ids, g_pids, g_base = sides["gallery"]
    return PipelineInputs(
        query_ids=q_ids,
        query_pids=q_pids,
        query_base=q_base,
        gallery_ids=g_ids,
        gallery_pids=g_pids,
        gallery_base=g_base,
        query_views=views["query"],
        gallery_views=views["gallery"],
        config=config,
    )

"""Command-line entry point wiring the full pipeline.

Exit codes are a stable CI contract: 0 success, 1 partial success (warnings,
e.g. some captions failed), 2 input/config error, 3 service error. Data
outputs never embed timestamps, so reruns with warm caches are byte-identical;
timestamped logging goes to stderr or an optional log file.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (
    CacheMissError,
    ConfigError,
    DataError,
    FormatError,
    MvrError,
    ProviderError,
    RangeError,
    ServiceError,
)
from .evaluate import (
    ABLATION_ROWS,
    AblationFlags,
    evaluate_baseline,
    render_reports_table,
    run_ablation,
    sweep_grid,
    sweep_scale,
    write_grid_files,
    write_report_json,
    write_scale_file,
)
from .keywords import extract_keywords
from .pipeline import RunConfig, load_keywords_file, load_run_inputs
from .records import (
    DIVERSE,
    KEY_CONSISTENT,
    CaptionRecord,
    CompensationConfig,
    TokenizedCaption,
    read_captions,
)
from .reformulate import ReformulationCache, reformulate_batch
from .retrieve import build_index, search, write_rankings
from .store import EmbeddingStore, read_store, read_token_bundles, write_store
from .synth import EchoParams, make_echo_inputs, write_inputs
from .drift import measure_drift, summarize, word_attention_matrix, write_drift_report
from .vectors import EmbeddingVector
from .errors import EmptyKeywordSetError

log = logging.getLogger("mvr")

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_INPUT = 2
EXIT_SERVICE = 3


def _load_config(args) -> RunConfig:
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    if getattr(args, "alpha", None) is not None or getattr(args, "beta", None) is not None \
            or getattr(args, "max_views", None) is not None:
        comp = config.compensation
        config.compensation = CompensationConfig(
            alpha=args.alpha if args.alpha is not None else comp.alpha,
            beta=args.beta if args.beta is not None else comp.beta,
            max_views=args.max_views if args.max_views is not None else comp.max_views,
            renormalize_output=comp.renormalize_output,
        )
    if getattr(args, "strategies", None):
        config.strategies = args.strategies.split(",")
        for s in config.strategies:
            if s not in (KEY_CONSISTENT, DIVERSE):
                raise ConfigError(f"unknown strategy {s!r}")
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "endpoint", None):
        config.embed_endpoint = args.endpoint
    if getattr(args, "llm_endpoint", None):
        config.providers = [
            dataclasses.replace(p, endpoint=args.llm_endpoint) for p in config.providers
        ]
    if getattr(args, "output", None):
        config.output_dir = args.output
    if getattr(args, "data_dir", None):
        config.data_dir = args.data_dir
    return config


def _out_dir(config: RunConfig) -> Path:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(args) -> int:
    params = EchoParams(
        dim=args.dim,
        n_identities=args.identities,
        queries_per_id=args.queries_per_id,
        gallery_per_id=args.gallery_per_id,
        noise=args.noise,
        gallery_noise=args.noise,
        spread_lo=args.spread_lo,
        spread_hi=args.spread_hi if args.spread_hi is not None else args.spread_lo,
        views_per_strategy=args.views,
    )
    inputs = make_echo_inputs(args.seed, params)
    out = write_inputs(inputs, args.out)
    print(f"synthetic dataset written to {out} "
          f"({len(inputs.query_ids)} queries, {len(inputs.gallery_ids)} gallery)")
    return EXIT_OK


def _tokenized_captions(config: RunConfig) -> list[TokenizedCaption]:
    config.validate_paths("query_captions", "token_store", "token_bundles", "sentence_store")
    captions = read_captions(config.query_captions)
    token_store = read_store(config.token_store)
    sentence_store = read_store(config.sentence_store)
    bundles = {b.caption_id: b for b in read_token_bundles(config.token_bundles)}
    out = []
    for caption in captions:
        bundle = bundles.get(caption.id)
        if bundle is None:
            raise DataError(f"no token bundle for caption {caption.id!r}")
        if caption.id not in sentence_store:
            raise DataError(f"no sentence vector for caption {caption.id!r}")
        out.append(
            TokenizedCaption(
                caption=caption,
                words=bundle.words,
                token_vectors=tuple(
                    token_store.vector(tid) for tid in bundle.token_store_ids
                ),
                sentence_vector=sentence_store.vector(caption.id),
            )
        )
    return out


def cmd_keywords(args) -> int:
    config = _load_config(args)
    out = _out_dir(config)
    delta = args.delta if args.delta is not None else config.delta
    warnings = 0
    path = out / "keywords.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        for tc in _tokenized_captions(config):
            try:
                result = extract_keywords(tc, delta=delta)
            except EmptyKeywordSetError as exc:
                log.warning("%s", exc)
                warnings += 1
                continue
            fh.write(
                json.dumps(
                    {
                        "caption_id": result.caption_id,
                        "keywords": list(result.keywords),
                        "scores": [round(s, 9) for s in result.scores],
                        "delta": result.delta,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
    print(f"keywords written to {path}")
    return EXIT_PARTIAL if warnings else EXIT_OK


def cmd_reformulate(args) -> int:
    config = _load_config(args)
    if not config.providers:
        raise ConfigError("no providers configured")
    config.validate_paths("query_captions")
    captions = read_captions(config.query_captions)
    if config.gallery_captions and Path(config.gallery_captions).exists():
        captions = captions + read_captions(config.gallery_captions)
    cache = ReformulationCache(config.cache)
    keywords_by_caption = load_keywords_file(config.keywords_file)
    batch = reformulate_batch(
        captions,
        config.strategies,
        config.providers,
        cache,
        keywords_by_caption=keywords_by_caption,
        templates=config.templates,
        requested_count=config.requested_count,
        concurrency=config.concurrency,
    )
    print(
        f"reformulated {len(batch.sets)} caption/strategy/provider triples "
        f"({len(batch.failures)} failures, {len(batch.skipped)} skipped, "
        f"cache now {len(cache)} entries)"
    )
    for failure in batch.failures:
        log.error("%s", failure)
    if batch.failures:
        return EXIT_SERVICE if not batch.sets else EXIT_PARTIAL
    return EXIT_OK


def cmd_evaluate(args) -> int:
    config = _load_config(args)
    inputs = load_run_inputs(config)
    out = _out_dir(config)
    baseline = evaluate_baseline(inputs)
    compensated = run_ablation(inputs, config.flags)
    write_report_json(baseline, out / "baseline.json")
    write_report_json(compensated, out / "compensated.json")
    table = render_reports_table([baseline, compensated], ["baseline", "compensated"])
    (out / "evaluate.txt").write_text(table, encoding="utf-8")
    print(table, end="")

    index = build_index(_store_from_inputs(inputs), dict(zip(inputs.gallery_ids, inputs.gallery_pids)))
    rankings = [
        search(index, EmbeddingVector(inputs.query_base[i]), k=10, query_id=qid)
        for i, qid in enumerate(inputs.query_ids)
    ]
    write_rankings(rankings, out / "rankings_baseline.jsonl")
    return EXIT_OK


def _store_from_inputs(inputs) -> EmbeddingStore:
    store = EmbeddingStore(dim=inputs.dim)
    for i, gid in enumerate(inputs.gallery_ids):
        store.add(gid, inputs.gallery_base[i])
    return store


def cmd_compensate(args) -> int:
    config = _load_config(args)
    inputs = load_run_inputs(config)
    out = _out_dir(config)
    from .evaluate import _compensated_side  # single implementation of the math

    query = _compensated_side(
        inputs.query_ids, inputs.query_base, inputs.query_views,
        config.flags.query_strategies(), inputs.config.alpha, inputs.config,
        "query_text",
    )
    gallery = _compensated_side(
        inputs.gallery_ids, inputs.gallery_base, inputs.gallery_views,
        config.flags.gallery_strategies(), inputs.config.beta, inputs.config,
        "gallery_image",
    )
    for name, ids, matrix in (
        ("compensated_query.mvre", inputs.query_ids, query),
        ("compensated_gallery.mvre", inputs.gallery_ids, gallery),
    ):
        if inputs.config.renormalize_output:
            matrix = matrix / np.linalg.norm(matrix, axis=1, keepdims=True)
        store = EmbeddingStore(dim=inputs.dim, normalized=inputs.config.renormalize_output)
        for i, vec_id in enumerate(ids):
            store.add(vec_id, matrix[i])
        write_store(store, Path(config.output_dir) / name)
    print(f"compensated stores written to {out}")
    return EXIT_OK


def cmd_index(args) -> int:
    config = _load_config(args)
    inputs = load_run_inputs(config)
    out = _out_dir(config)
    store = EmbeddingStore(dim=inputs.dim, normalized=True)
    matrix = inputs.gallery_base / np.linalg.norm(inputs.gallery_base, axis=1, keepdims=True)
    for i, gid in enumerate(inputs.gallery_ids):
        store.add(gid, matrix[i])
    write_store(store, out / "gallery_index.mvre")
    with open(out / "gallery_identities.jsonl", "w", encoding="utf-8") as fh:
        for gid, pid in zip(inputs.gallery_ids, inputs.gallery_pids):
            fh.write(json.dumps({"id": gid, "person_id": pid}) + "\n")
    print(f"gallery index written to {out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    config = _load_config(args)
    inputs = load_run_inputs(config)
    out = _out_dir(config)
    reports = [run_ablation(inputs, flags) for flags in ABLATION_ROWS]
    labels = [flags.label() for flags in ABLATION_ROWS]
    table = render_reports_table(reports, labels)
    (out / "ablation.txt").write_text(table, encoding="utf-8")
    with open(out / "ablation.jsonl", "w", encoding="utf-8") as fh:
        for rep in reports:
            fh.write(json.dumps(rep.to_dict()) + "\n")
    print(table, end="")
    return EXIT_OK


def _parse_float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip() != ""]


def cmd_sweep(args) -> int:
    config = _load_config(args)
    inputs = load_run_inputs(config)
    out = _out_dir(config)
    if args.scales:
        scales = [int(x) for x in args.scales.split(",") if x.strip() != ""]
        reports = sweep_scale(inputs, scales)
        path = write_scale_file(scales, reports, out / "sweep_scale.csv")
        print(f"scale sweep written to {path}")
        return EXIT_OK
    if not args.alphas or not args.betas:
        raise ConfigError("sweep needs either --scales or both --alphas and --betas")
    alphas = _parse_float_list(args.alphas)
    betas = _parse_float_list(args.betas)
    grid = sweep_grid(inputs, alphas, betas)
    paths = write_grid_files(alphas, betas, grid, out)
    print(f"grid sweep written to {', '.join(str(p) for p in paths)}")
    return EXIT_OK


def cmd_drift(args) -> int:
    config = _load_config(args)
    inputs = load_run_inputs(config)
    out = _out_dir(config)
    records = []
    for i, qid in enumerate(inputs.query_ids):
        base = EmbeddingVector(inputs.query_base[i])
        views = []
        for strategy in (KEY_CONSISTENT, DIVERSE):
            block = inputs.query_views.get(strategy, {}).get(qid)
            if block is not None:
                views.extend(EmbeddingVector(v) for v in block)
        records.append(measure_drift(qid, base, views))
    write_drift_report(records, summarize(records), out)

    if config.token_store and config.token_bundles and Path(config.token_store).exists():
        token_store = read_store(config.token_store)
        bundles = read_token_bundles(config.token_bundles)
        with open(out / "word_attention.jsonl", "w", encoding="utf-8") as fh:
            for bundle in bundles:
                if bundle.caption_id not in set(inputs.query_ids):
                    continue
                i = inputs.query_ids.index(bundle.caption_id)
                sentences = [EmbeddingVector(inputs.query_base[i])]
                for strategy in (KEY_CONSISTENT, DIVERSE):
                    block = inputs.query_views.get(strategy, {}).get(bundle.caption_id)
                    if block is not None:
                        sentences.extend(EmbeddingVector(v) for v in block)
                matrix = word_attention_matrix(
                    [token_store.vector(tid) for tid in bundle.token_store_ids],
                    sentences,
                )
                fh.write(
                    json.dumps(
                        {
                            "caption_id": bundle.caption_id,
                            "words": list(bundle.words),
                            "attention": [[round(x, 9) for x in row] for row in matrix.tolist()],
                        }
                    )
                    + "\n"
                )
    print(f"drift report written to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvr",
        description="Training-free multi-view reformulation retrieval engine",
    )
    parser.add_argument("--version", action="version", version=f"mvr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, needs_config=True):
        p.add_argument("--config", help="YAML run configuration", default=None)
        p.add_argument("--output", help="output directory override")
        p.add_argument("--data-dir", dest="data_dir", help="precomputed dataset directory")
        p.add_argument("--alpha", type=float, default=None)
        p.add_argument("--beta", type=float, default=None)
        p.add_argument("--max-views", dest="max_views", type=int, default=None)
        p.add_argument("--strategies", help="comma-separated strategy subset")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--endpoint", help="embedding service endpoint override")
        p.add_argument("--llm-endpoint", dest="llm_endpoint", help="chat service endpoint override")
        p.add_argument("--log-file", dest="log_file", default=None)
        p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("keywords", help="extract visually key words per caption")
    common(p)
    p.add_argument("--delta", type=float, default=None, help="centered-score threshold")
    p.set_defaults(func=cmd_keywords)

    p = sub.add_parser("reformulate", help="populate the reformulation cache via LLM providers")
    common(p)
    p.set_defaults(func=cmd_reformulate)

    p = sub.add_parser("compensate", help="export compensated feature stores")
    common(p)
    p.set_defaults(func=cmd_compensate)

    p = sub.add_parser("index", help="build and export the normalized gallery index")
    common(p)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("evaluate", help="baseline + compensated metrics reports")
    common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="run the side x strategy ablation matrix")
    common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="alpha/beta grid sweep or view-scale sweep")
    common(p)
    p.add_argument("--alphas", help="comma-separated alpha values")
    p.add_argument("--betas", help="comma-separated beta values")
    p.add_argument("--scales", help="comma-separated view counts")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("drift", help="embedding drift diagnostics between base and views")
    common(p)
    p.set_defaults(func=cmd_drift)

    p = sub.add_parser("synth", help="generate the synthetic latent-recovery dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dim", type=int, default=24)
    p.add_argument("--identities", type=int, default=48)
    p.add_argument("--queries-per-id", dest="queries_per_id", type=int, default=1)
    p.add_argument("--gallery-per-id", dest="gallery_per_id", type=int, default=2)
    p.add_argument("--noise", type=float, default=0.5)
    p.add_argument("--spread-lo", dest="spread_lo", type=float, default=0.55)
    p.add_argument("--spread-hi", dest="spread_hi", type=float, default=None)
    p.add_argument("--views", type=int, default=15)
    p.add_argument("--log-file", dest="log_file", default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_synth)

    return parser


def _setup_logging(args) -> None:
    level = logging.DEBUG if getattr(args, "verbose", False) else logging.INFO
    handlers = [logging.StreamHandler(sys.stderr)]
    if getattr(args, "log_file", None):
        handlers.append(logging.FileHandler(args.log_file))
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        handlers=handlers,
        force=True,
    )


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args)
    try:
        return args.func(args)
    except (ConfigError, FormatError, DataError, RangeError, CacheMissError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except FileNotFoundError as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except (ServiceError, ProviderError) as exc:
        log.error("%s", exc)
        return EXIT_SERVICE
    except MvrError as exc:
        log.error("%s", exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

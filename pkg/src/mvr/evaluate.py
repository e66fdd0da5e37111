"""Rank-k (CMC) and mAP metrics plus the ablation and hyperparameter sweep
runners that drive them.

Every same-identity gallery item counts as relevant (no camera filtering);
ranking ties follow the retrieval tie rule (ascending gallery id), which the
stable per-row sort reproduces as long as matrix columns are in gallery id
order.
"""
from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .compensate import compensate_image, compensate_text
from .errors import CacheMissError, DataError, DimMismatchError, RangeError
from .records import DIVERSE, KEY_CONSISTENT, CompensationConfig
from .vectors import EmbeddingVector

METRIC_FIELDS = ("r1", "r5", "r10", "map")


@dataclass(frozen=True)
class MetricsReport:
    r1: float
    r5: float
    r10: float
    map: float
    query_count: int
    per_query_ap: tuple[float, ...]
    config_snapshot: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "per_query_ap", tuple(self.per_query_ap))
        if not (self.r1 <= self.r5 + 1e-12 and self.r5 <= self.r10 + 1e-12):
            raise ValueError(f"CMC not monotone: {self.r1}, {self.r5}, {self.r10}")
        expected_map = float(np.mean(self.per_query_ap)) * 100.0
        if abs(self.map - expected_map) > 1e-9:
            raise ValueError(f"map {self.map} != mean(per-query AP)*100 {expected_map}")

    def values(self) -> tuple[float, float, float, float]:
        return (self.r1, self.r5, self.r10, self.map)

    def to_dict(self) -> dict:
        return {
            "r1": self.r1,
            "r5": self.r5,
            "r10": self.r10,
            "map": self.map,
            "query_count": self.query_count,
            "per_query_ap": list(self.per_query_ap),
            "config_snapshot": self.config_snapshot,
        }


def _match_matrix(matrix, query_pids, gallery_pids, query_ids=None):
    """Per-query descending-similarity match flags (stable tie rule)."""
    matrix = np.asarray(matrix, dtype=np.float64)
    q_pids = np.asarray(list(query_pids))
    g_pids = np.asarray(list(gallery_pids))
    if matrix.ndim != 2 or matrix.shape != (len(q_pids), len(g_pids)):
        raise DimMismatchError(
            f"matrix shape {matrix.shape} does not match {len(q_pids)} queries "
            f"x {len(g_pids)} gallery items"
        )
    relevant = (g_pids[None, :] == q_pids[:, None]).sum(axis=1)
    if np.any(relevant == 0):
        bad = int(np.argmax(relevant == 0))
        name = query_ids[bad] if query_ids is not None else f"#{bad}"
        raise DataError(
            f"query {name} (person {q_pids[bad]!r}) has no relevant gallery item"
        )
    order = np.argsort(-matrix, axis=1, kind="stable")
    return g_pids[order] == q_pids[:, None]


def rank_k(matrix, query_pids, gallery_pids, k: int) -> float:
    """Percentage of queries with a correct identity in the top k."""
    if k <= 0:
        raise RangeError(f"k must be positive, got {k}")
    matches = _match_matrix(matrix, query_pids, gallery_pids)
    hits = matches[:, : min(k, matches.shape[1])].any(axis=1)
    return float(hits.mean()) * 100.0


def mean_ap(matrix, query_pids, gallery_pids) -> float:
    """Mean average precision over all queries, as a percentage."""
    matches = _match_matrix(matrix, query_pids, gallery_pids)
    return float(np.mean(_per_query_ap(matches))) * 100.0


def _per_query_ap(matches: np.ndarray) -> np.ndarray:
    positions = np.arange(1, matches.shape[1] + 1, dtype=np.float64)
    cum_hits = np.cumsum(matches, axis=1)
    precision = cum_hits / positions[None, :]
    return (precision * matches).sum(axis=1) / matches.sum(axis=1)


def compute_metrics(
    matrix,
    query_pids,
    gallery_pids,
    config_snapshot: dict | None = None,
    query_ids=None,
) -> MetricsReport:
    """One-pass CMC (k = 1, 5, 10) and mAP report."""
    matches = _match_matrix(matrix, query_pids, gallery_pids, query_ids)
    n_gallery = matches.shape[1]
    first_hit = np.argmax(matches, axis=1)  # every query has >= 1 relevant
    per_ap = _per_query_ap(matches)
    return MetricsReport(
        r1=float((first_hit < min(1, n_gallery)).mean()) * 100.0,
        r5=float((first_hit < min(5, n_gallery)).mean()) * 100.0,
        r10=float((first_hit < min(10, n_gallery)).mean()) * 100.0,
        map=float(per_ap.mean()) * 100.0,
        query_count=matches.shape[0],
        per_query_ap=tuple(float(a) for a in per_ap),
        config_snapshot=config_snapshot or {},
    )


@dataclass(frozen=True)
class AblationFlags:
    """Which side x strategy combinations contribute compensation views."""

    query_key: bool = False
    query_diverse: bool = False
    gallery_key: bool = False
    gallery_diverse: bool = False

    def query_strategies(self) -> tuple[str, ...]:
        out = []
        if self.query_key:
            out.append(KEY_CONSISTENT)
        if self.query_diverse:
            out.append(DIVERSE)
        return tuple(out)

    def gallery_strategies(self) -> tuple[str, ...]:
        out = []
        if self.gallery_key:
            out.append(KEY_CONSISTENT)
        if self.gallery_diverse:
            out.append(DIVERSE)
        return tuple(out)

    def snapshot(self) -> dict:
        return dataclasses.asdict(self)

    def label(self) -> str:
        bits = []
        for name, on in self.snapshot().items():
            bits.append(f"{name}={'on' if on else 'off'}")
        return " ".join(bits)


ALL_ON = AblationFlags(True, True, True, True)
ALL_OFF = AblationFlags()

# The standard ablation rows: baseline, per-strategy both sides, per-side
# both strategies, and everything enabled.
ABLATION_ROWS: tuple[AblationFlags, ...] = (
    ALL_OFF,
    AblationFlags(query_key=True, gallery_key=True),
    AblationFlags(query_diverse=True, gallery_diverse=True),
    AblationFlags(gallery_key=True, gallery_diverse=True),
    AblationFlags(query_key=True, query_diverse=True),
    ALL_ON,
)


def _sorted_unique(ids) -> bool:
    return all(ids[i] < ids[i + 1] for i in range(len(ids) - 1))


@dataclass(frozen=True)
class PipelineInputs:
    """Everything an evaluation run needs, with views pre-embedded.

    View arrays are keyed by strategy, then source id; each value is an
    (n_views, dim) array in the order the reformulations were generated.
    Ids must be in ascending order so matrix columns follow the retrieval
    tie rule.
    """

    query_ids: tuple[str, ...]
    query_pids: tuple[str, ...]
    query_base: np.ndarray
    gallery_ids: tuple[str, ...]
    gallery_pids: tuple[str, ...]
    gallery_base: np.ndarray
    query_views: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    gallery_views: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    config: CompensationConfig = field(default_factory=CompensationConfig)

    def __post_init__(self):
        if len(self.query_ids) != len(self.query_pids) or len(self.query_ids) != self.query_base.shape[0]:
            raise ValueError("query ids/pids/base must align")
        if len(self.gallery_ids) != len(self.gallery_pids) or len(self.gallery_ids) != self.gallery_base.shape[0]:
            raise ValueError("gallery ids/pids/base must align")
        if self.query_base.shape[1] != self.gallery_base.shape[1]:
            raise DimMismatchError("query and gallery dims differ")
        if not _sorted_unique(self.query_ids) or not _sorted_unique(self.gallery_ids):
            raise ValueError("ids must be unique and in ascending order")

    @property
    def dim(self) -> int:
        return int(self.query_base.shape[1])


def _gather_views(views_by_strategy, source_id, strategies, dim):
    blocks = []
    for strategy in (KEY_CONSISTENT, DIVERSE):
        if strategy in strategies:
            block = views_by_strategy[strategy][source_id]
            if block.shape[0]:
                blocks.append(np.asarray(block, dtype=np.float64))
    if not blocks:
        return np.zeros((0, dim))
    return np.vstack(blocks)


def _compensated_side(
    ids, base, views_by_strategy, strategies, weight, config, side, view_limit=None
):
    """Compensated feature matrix for one side; base passes through untouched
    when the side is disabled (no strategies or zero weight), which keeps the
    all-off run bit-identical to the baseline.

    Renormalization is deferred to the retrieval index (cosine makes it a
    no-op for rankings). When every id carries the same view count the mean
    is computed as one stacked array operation; the per-id route through the
    compensate ops is the fallback and the semantics reference.
    """
    if not strategies or weight == 0.0 or (view_limit is not None and view_limit == 0):
        return base

    missing = []
    for strategy in strategies:
        present = views_by_strategy.get(strategy, {})
        missing.extend(f"{strategy}:{i}" for i in ids if i not in present)
    if missing:
        raise CacheMissError(
            f"{side}: missing cached views for {len(missing)} ids", missing_ids=missing
        )

    limit = config.max_views if view_limit is None else min(view_limit, config.max_views)
    stacks = [
        _gather_views(views_by_strategy, source_id, strategies, base.shape[1])
        for source_id in ids
    ]
    counts = {s.shape[0] for s in stacks}
    if len(counts) == 1 and counts != {0}:
        views = np.stack(stacks)[:, :limit]  # (n, m, dim)
        if views.shape[1]:
            return base + weight * views.mean(axis=1)
        return base

    run_config = replace(
        config, alpha=weight, beta=weight, renormalize_output=False,
        max_views=max(limit, 1),
    )
    compensate = compensate_text if side == "query_text" else compensate_image
    rows = np.empty_like(base)
    for i, source_id in enumerate(ids):
        view_list = [EmbeddingVector(v) for v in stacks[i][:limit]]
        feature = compensate(
            EmbeddingVector(base[i]), view_list, run_config, source_id=source_id
        )
        rows[i] = feature.output.values
    return rows


def _evaluate_arrays(inputs: PipelineInputs, query_matrix, gallery_matrix, snapshot):
    from .retrieve import GalleryIndex, similarity_matrix  # local to avoid cycle

    gallery = np.asarray(gallery_matrix, dtype=np.float64)
    norms = np.linalg.norm(gallery, axis=1, keepdims=True)
    index = GalleryIndex(
        ids=inputs.gallery_ids,
        person_ids=inputs.gallery_pids,
        matrix=gallery / norms,
    )
    sims = similarity_matrix(index, np.asarray(query_matrix, dtype=np.float64))
    return compute_metrics(
        sims,
        inputs.query_pids,
        inputs.gallery_pids,
        config_snapshot=snapshot,
        query_ids=inputs.query_ids,
    ), sims


def evaluate_baseline(inputs: PipelineInputs) -> MetricsReport:
    """Metrics with no compensation anywhere."""
    report, _ = _evaluate_arrays(
        inputs, inputs.query_base, inputs.gallery_base,
        {"flags": ALL_OFF.snapshot(), **inputs.config.snapshot(), "alpha": 0.0, "beta": 0.0},
    )
    return report


def run_ablation(
    inputs: PipelineInputs,
    flags: AblationFlags,
    config: CompensationConfig | None = None,
    query_view_limit: int | None = None,
    return_similarity: bool = False,
):
    """Evaluate one flag combination.

    Disabled sides (no flags, or a zero weight) reuse the base features
    through the identical code path as the baseline run, so an all-off run
    reproduces baseline rankings and metrics exactly.
    """
    config = config or inputs.config
    query_matrix = _compensated_side(
        inputs.query_ids, inputs.query_base, inputs.query_views,
        flags.query_strategies(), config.alpha, config, "query_text",
        view_limit=query_view_limit,
    )
    gallery_matrix = _compensated_side(
        inputs.gallery_ids, inputs.gallery_base, inputs.gallery_views,
        flags.gallery_strategies(), config.beta, config, "gallery_image",
    )
    snapshot = {"flags": flags.snapshot(), **config.snapshot()}
    if query_view_limit is not None:
        snapshot["query_view_limit"] = query_view_limit
    report, sims = _evaluate_arrays(inputs, query_matrix, gallery_matrix, snapshot)
    if return_similarity:
        return report, sims
    return report


def run_ablation_rows(
    inputs: PipelineInputs,
    rows: tuple[AblationFlags, ...] = ABLATION_ROWS,
    config: CompensationConfig | None = None,
) -> list[MetricsReport]:
    return [run_ablation(inputs, flags, config=config) for flags in rows]


def sweep_grid(
    inputs: PipelineInputs,
    alphas: list[float],
    betas: list[float],
    flags: AblationFlags = ALL_ON,
) -> list[list[MetricsReport]]:
    """Cross-product weight sweep; grid[i][j] uses alphas[i], betas[j]."""
    if not alphas or not betas:
        raise RangeError("alpha and beta value lists must be nonempty")
    grid = []
    for a in alphas:
        row = []
        for b in betas:
            config = replace(inputs.config, alpha=a, beta=b)
            row.append(run_ablation(inputs, flags, config=config))
        grid.append(row)
    return grid


def _available_query_views(inputs: PipelineInputs, strategies) -> int:
    counts = []
    for source_id in inputs.query_ids:
        total = 0
        for strategy in strategies:
            block = inputs.query_views.get(strategy, {}).get(source_id)
            if block is None:
                raise CacheMissError(
                    f"missing cached views for {strategy}:{source_id}",
                    missing_ids=[f"{strategy}:{source_id}"],
                )
            total += block.shape[0]
        counts.append(total)
    return min(counts) if counts else 0


def sweep_scale(
    inputs: PipelineInputs,
    scales: list[int],
    flags: AblationFlags = AblationFlags(query_key=True, query_diverse=True),
) -> list[MetricsReport]:
    """Query-side compensation scale sweep: use only the first m views.

    Scale 0 is the baseline run. Raises RangeError when a scale exceeds the
    views available for some query.
    """
    strategies = flags.query_strategies()
    if any(m < 0 for m in scales):
        raise RangeError("scales must be nonnegative")
    positive = [m for m in scales if m > 0]
    if positive and strategies:
        available = _available_query_views(inputs, strategies)
        too_big = [m for m in positive if m > available]
        if too_big:
            raise RangeError(
                f"scale {max(too_big)} exceeds available views ({available})"
            )
    return [
        run_ablation(inputs, flags, query_view_limit=m)
        for m in scales
    ]


def render_reports_table(reports: list[MetricsReport], labels: list[str]) -> str:
    """Fixed-width text table of R1/R5/R10/mAP, one row per report."""
    width = max([len(l) for l in labels] + [8])
    lines = [f"{'run':<{width}}  {'R1':>7} {'R5':>7} {'R10':>7} {'mAP':>7}"]
    for label, rep in zip(labels, reports):
        lines.append(
            f"{label:<{width}}  {rep.r1:>7.2f} {rep.r5:>7.2f} {rep.r10:>7.2f} {rep.map:>7.2f}"
        )
    return "\n".join(lines) + "\n"


def write_report_json(report: MetricsReport, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")


def write_grid_files(
    alphas: list[float],
    betas: list[float],
    grid: list[list[MetricsReport]],
    out_dir,
    prefix: str = "sweep_grid",
) -> list[Path]:
    """Write the grid as a long-form CSV plus one wide CSV per metric.

    Wide files carry alpha labels down the first column and beta labels
    across the header, ready for external heatmap plotting.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    long_path = out_dir / f"{prefix}.csv"
    with open(long_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["alpha", "beta", "r1", "r5", "r10", "map"])
        for i, a in enumerate(alphas):
            for j, b in enumerate(betas):
                writer.writerow([a, b, *[f"{v:.6f}" for v in grid[i][j].values()]])
    written.append(long_path)

    for metric in ("r1", "map"):
        wide_path = out_dir / f"{prefix}_{metric}.csv"
        with open(wide_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["alpha/beta", *betas])
            for i, a in enumerate(alphas):
                writer.writerow(
                    [a, *[f"{getattr(grid[i][j], metric):.6f}" for j in range(len(betas))]]
                )
        written.append(wide_path)
    return written


def write_scale_file(scales: list[int], reports: list[MetricsReport], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scale", "r1", "r5", "r10", "map"])
        for m, rep in zip(scales, reports):
            writer.writerow([m, *[f"{v:.6f}" for v in rep.values()]])
    return path

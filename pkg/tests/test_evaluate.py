import json

import numpy as np
import pytest

from mvr.errors import CacheMissError, DataError, RangeError
from mvr.evaluate import (
    ABLATION_ROWS,
    ALL_OFF,
    ALL_ON,
    AblationFlags,
    MetricsReport,
    PipelineInputs,
    compute_metrics,
    evaluate_baseline,
    mean_ap,
    rank_k,
    render_reports_table,
    run_ablation,
    sweep_grid,
    sweep_scale,
    write_grid_files,
    write_report_json,
    write_scale_file,
)
from mvr.records import DIVERSE, KEY_CONSISTENT, CompensationConfig
from mvr.synth import EchoParams, make_echo_inputs

from oracles import naive_mean_ap, naive_rank_k


def random_instance(rng, n_q=30, n_g=100, n_pid=8):
    pids = [f"p{i}" for i in range(n_pid)]
    gallery_pids = [pids[int(rng.integers(0, n_pid))] for _ in range(n_g)]
    # ensure every pid occurs in the gallery so all queries have a relevant item
    for i, p in enumerate(pids):
        gallery_pids[i] = p
    query_pids = [pids[int(rng.integers(0, n_pid))] for _ in range(n_q)]
    matrix = rng.standard_normal((n_q, n_g))
    return matrix, query_pids, gallery_pids


class TestRankK:
    def test_perfect_top1(self):
        matrix = np.array([[0.9, 0.1], [0.2, 0.8]])
        assert rank_k(matrix, ["a", "b"], ["a", "b"], 1) == 100.0

    def test_relevant_at_rank_three(self):
        matrix = np.array([[0.9, 0.8, 0.7, 0.1]])
        qp, gp = ["x"], ["a", "b", "x", "c"]
        assert rank_k(matrix, qp, gp, 1) == 0.0
        assert rank_k(matrix, qp, gp, 5) == 100.0
        assert rank_k(matrix, qp, gp, 10) == 100.0

    def test_against_naive_oracle(self, rng):
        for _ in range(10):
            matrix, qp, gp = random_instance(rng)
            for k in (1, 5, 10):
                assert rank_k(matrix, qp, gp, k) == pytest.approx(
                    naive_rank_k(matrix, qp, gp, k), abs=1e-9
                )

    def test_no_relevant_item_raises(self):
        matrix = np.array([[0.5, 0.5]])
        with pytest.raises(DataError, match="lonely"):
            rank_k(matrix, ["lonely"], ["a", "b"], 1)

    def test_k_positive(self, rng):
        matrix, qp, gp = random_instance(rng)
        with pytest.raises(RangeError):
            rank_k(matrix, qp, gp, 0)


class TestMeanAp:
    def test_single_relevant_at_rank_one(self):
        matrix = np.array([[0.9, 0.1, 0.2]])
        assert mean_ap(matrix, ["x"], ["x", "a", "b"]) == pytest.approx(100.0)

    def test_two_relevant_ranks_one_and_three(self):
        # AP = (1/2)(1/1 + 2/3) = 0.83333...
        matrix = np.array([[0.9, 0.5, 0.4]])
        result = mean_ap(matrix, ["x"], ["x", "a", "x"])
        assert result == pytest.approx(100 * (1 + 2 / 3) / 2, abs=1e-9)

    def test_against_naive_oracle(self, rng):
        for _ in range(10):
            matrix, qp, gp = random_instance(rng)
            assert mean_ap(matrix, qp, gp) == pytest.approx(
                naive_mean_ap(matrix, qp, gp), abs=1e-9
            )

    def test_tie_rule_matches_retrieval(self):
        # two identical scores: ascending column (id) order decides
        matrix = np.array([[0.5, 0.5]])
        # relevant item in column 1: with ties broken toward column 0, AP = 1/2
        assert mean_ap(matrix, ["x"], ["a", "x"]) == pytest.approx(50.0)
        assert mean_ap(matrix, ["x"], ["x", "a"]) == pytest.approx(100.0)


class TestComputeMetrics:
    def test_report_invariants(self, rng):
        for _ in range(10):
            matrix, qp, gp = random_instance(rng)
            report = compute_metrics(matrix, qp, gp)
            assert report.r1 <= report.r5 <= report.r10
            assert all(0.0 <= ap <= 1.0 for ap in report.per_query_ap)
            assert report.map == pytest.approx(
                100 * np.mean(report.per_query_ap), abs=1e-9
            )
            assert report.query_count == len(qp)

    def test_matches_standalone_ops(self, rng):
        matrix, qp, gp = random_instance(rng)
        report = compute_metrics(matrix, qp, gp)
        assert report.r1 == rank_k(matrix, qp, gp, 1)
        assert report.r5 == rank_k(matrix, qp, gp, 5)
        assert report.r10 == rank_k(matrix, qp, gp, 10)
        assert report.map == pytest.approx(mean_ap(matrix, qp, gp), abs=1e-12)

    def test_gallery_permutation_invariance(self, rng):
        matrix, qp, gp = random_instance(rng)
        base = compute_metrics(matrix, qp, gp)
        perm = rng.permutation(len(gp))
        permuted = compute_metrics(matrix[:, perm], qp, [gp[i] for i in perm])
        assert base.values() == pytest.approx(permuted.values(), abs=1e-9)

    def test_monotone_transform_invariance(self, rng):
        matrix, qp, gp = random_instance(rng)
        base = compute_metrics(matrix, qp, gp)
        transformed = compute_metrics(np.exp(2.0 * matrix) + 5.0, qp, gp)
        assert base.values() == transformed.values()

    def test_invalid_report_rejected(self):
        with pytest.raises(ValueError):
            MetricsReport(r1=50, r5=40, r10=60, map=45, query_count=2, per_query_ap=(0.45, 0.45))
        with pytest.raises(ValueError):
            MetricsReport(r1=10, r5=20, r10=30, map=99, query_count=2, per_query_ap=(0.1, 0.1))


class TestRunAblation:
    def test_all_off_equals_baseline_bitwise(self):
        for seed in range(5):
            inputs = make_echo_inputs(seed)
            baseline, base_sims = run_ablation(inputs, ALL_OFF, return_similarity=True)
            again, again_sims = run_ablation(inputs, ALL_OFF, return_similarity=True)
            assert np.array_equal(base_sims, again_sims)
            direct = evaluate_baseline(inputs)
            assert direct.values() == baseline.values()
            assert np.argsort(-base_sims, axis=1, kind="stable").tobytes() == \
                np.argsort(-again_sims, axis=1, kind="stable").tobytes()

    def test_alpha_beta_zero_equals_baseline_bitwise(self):
        inputs = make_echo_inputs(3)
        zero = CompensationConfig(alpha=0.0, beta=0.0)
        report, sims = run_ablation(inputs, ALL_ON, config=zero, return_similarity=True)
        _, base_sims = run_ablation(inputs, ALL_OFF, return_similarity=True)
        assert np.array_equal(sims, base_sims)

    def test_compensation_improves_synthetic_rankings(self):
        inputs = make_echo_inputs(0)
        base = run_ablation(inputs, ALL_OFF)
        comp = run_ablation(inputs, ALL_ON)
        assert comp.r1 > base.r1

    def test_flags_recorded_in_snapshot(self):
        inputs = make_echo_inputs(1)
        for flags in ABLATION_ROWS:
            report = run_ablation(inputs, flags)
            assert report.config_snapshot["flags"] == flags.snapshot()

    def test_missing_views_raise_cache_miss(self):
        inputs = make_echo_inputs(0)
        broken = PipelineInputs(
            query_ids=inputs.query_ids,
            query_pids=inputs.query_pids,
            query_base=inputs.query_base,
            gallery_ids=inputs.gallery_ids,
            gallery_pids=inputs.gallery_pids,
            gallery_base=inputs.gallery_base,
            query_views={KEY_CONSISTENT: {}, DIVERSE: {}},
            gallery_views=inputs.gallery_views,
            config=inputs.config,
        )
        with pytest.raises(CacheMissError) as exc_info:
            run_ablation(broken, AblationFlags(query_key=True))
        assert exc_info.value.missing_ids

    def test_fast_and_loop_compensation_paths_agree(self):
        # ragged view counts force the per-item route; compare with the
        # uniform-count vectorized route on the same effective views
        inputs = make_echo_inputs(2)
        fast, fast_sims = run_ablation(
            inputs, AblationFlags(query_key=True), return_similarity=True
        )
        ragged_views = {
            KEY_CONSISTENT: dict(inputs.query_views[KEY_CONSISTENT]),
            DIVERSE: dict(inputs.query_views[DIVERSE]),
        }
        # pad one id with an extra never-used view beyond max_views
        first = inputs.query_ids[0]
        block = ragged_views[KEY_CONSISTENT][first]
        ragged_views[KEY_CONSISTENT][first] = np.vstack([block, block[-1:]])
        ragged = PipelineInputs(
            query_ids=inputs.query_ids,
            query_pids=inputs.query_pids,
            query_base=inputs.query_base,
            gallery_ids=inputs.gallery_ids,
            gallery_pids=inputs.gallery_pids,
            gallery_base=inputs.gallery_base,
            query_views=ragged_views,
            gallery_views=inputs.gallery_views,
            config=CompensationConfig(max_views=15),
        )
        uniform = PipelineInputs(
            query_ids=inputs.query_ids,
            query_pids=inputs.query_pids,
            query_base=inputs.query_base,
            gallery_ids=inputs.gallery_ids,
            gallery_pids=inputs.gallery_pids,
            gallery_base=inputs.gallery_base,
            query_views=inputs.query_views,
            gallery_views=inputs.gallery_views,
            config=CompensationConfig(max_views=15),
        )
        _, ragged_sims = run_ablation(
            ragged, AblationFlags(query_key=True), return_similarity=True
        )
        _, uniform_sims = run_ablation(
            uniform, AblationFlags(query_key=True), return_similarity=True
        )
        assert np.allclose(ragged_sims, uniform_sims, atol=1e-12, rtol=0)


class TestSweeps:
    def test_single_cell_grid_equals_direct_run(self):
        inputs = make_echo_inputs(0)
        grid = sweep_grid(inputs, [0.75], [0.3])
        direct = run_ablation(inputs, ALL_ON, config=CompensationConfig(alpha=0.75, beta=0.3))
        assert grid[0][0].values() == direct.values()

    def test_zero_cell_equals_baseline(self):
        inputs = make_echo_inputs(0)
        grid = sweep_grid(inputs, [0.0, 0.75], [0.0, 0.3])
        baseline = evaluate_baseline(inputs)
        assert grid[0][0].values() == baseline.values()

    def test_alpha_curve_not_monotone_decreasing_at_small_alpha(self):
        # compensation helps before it hurts: R1 rises from alpha=0
        inputs = make_echo_inputs(0)
        grid = sweep_grid(inputs, [0.0, 0.75], [0.0], flags=AblationFlags(True, True, False, False))
        assert grid[1][0].r1 > grid[0][0].r1

    def test_empty_axis_rejected(self):
        inputs = make_echo_inputs(0)
        with pytest.raises(RangeError):
            sweep_grid(inputs, [], [0.3])

    def test_scale_zero_is_baseline(self):
        inputs = make_echo_inputs(0)
        reports = sweep_scale(inputs, [0])
        assert reports[0].values() == evaluate_baseline(inputs).values()

    def test_scale_full_matches_plain_run(self):
        inputs = make_echo_inputs(0)
        flags = AblationFlags(query_key=True, query_diverse=True)
        reports = sweep_scale(inputs, [30], flags=flags)
        plain = run_ablation(inputs, flags)
        assert reports[0].values() == plain.values()

    def test_scale_exceeding_views_rejected(self):
        inputs = make_echo_inputs(0)
        with pytest.raises(RangeError):
            sweep_scale(inputs, [0, 31])

    def test_scale_curve_non_decreasing_on_average(self):
        scales = [0, 5, 15, 30]
        curves = []
        for seed in range(20):
            inputs = make_echo_inputs(seed)
            reports = sweep_scale(inputs, scales)
            curves.append([r.map for r in reports])
        mean_curve = np.mean(curves, axis=0)
        assert np.all(np.diff(mean_curve) >= -1e-9)


class TestReportFiles:
    def test_report_json_roundtrip(self, tmp_path, rng):
        matrix, qp, gp = random_instance(rng)
        report = compute_metrics(matrix, qp, gp, config_snapshot={"alpha": 0.75})
        path = tmp_path / "report.json"
        write_report_json(report, path)
        loaded = json.loads(path.read_text())
        assert loaded["r1"] == report.r1
        assert loaded["config_snapshot"] == {"alpha": 0.75}

    def test_table_render(self, rng):
        matrix, qp, gp = random_instance(rng)
        report = compute_metrics(matrix, qp, gp)
        text = render_reports_table([report, report], ["baseline", "compensated"])
        lines = text.splitlines()
        assert len(lines) == 3
        assert "R1" in lines[0] and "mAP" in lines[0]
        assert lines[1].startswith("baseline")

    def test_grid_files(self, tmp_path):
        inputs = make_echo_inputs(0)
        alphas, betas = [0.0, 0.75], [0.0, 0.3]
        grid = sweep_grid(inputs, alphas, betas)
        paths = write_grid_files(alphas, betas, grid, tmp_path)
        long_lines = paths[0].read_text().splitlines()
        assert long_lines[0] == "alpha,beta,r1,r5,r10,map"
        assert len(long_lines) == 5
        wide_lines = paths[1].read_text().splitlines()
        assert wide_lines[0] == "alpha/beta,0.0,0.3"
        assert len(wide_lines) == 3

    def test_scale_file(self, tmp_path):
        inputs = make_echo_inputs(0)
        scales = [0, 10]
        reports = sweep_scale(inputs, scales)
        path = write_scale_file(scales, reports, tmp_path / "scale.csv")
        lines = path.read_text().splitlines()
        assert lines[0] == "scale,r1,r5,r10,map"
        assert len(lines) == 3

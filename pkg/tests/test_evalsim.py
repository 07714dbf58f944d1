"""Tests for patch metrics, correlation, and the simulation harness."""

import json
import math

import numpy as np
import pytest

from scribbleloop.backbone import McRecord
from scribbleloop.corrector import CorrectionPolicy
from scribbleloop.errors import DegenerateInputError
from scribbleloop.evalsim import (
    METRIC_NAMES,
    Confusion,
    ExperimentTable,
    SlideBundle,
    confusion,
    corpus_experiment,
    experiment_markdown,
    pearson,
    simulate_run,
    tune_n_epoch,
    write_experiment_csv,
    write_experiment_json,
    write_run_results,
    write_timings,
    wsi_metrics,
)
from scribbleloop.tiling import PatchSpec, build_grid
from scribbleloop.uncertainty import Calibration

# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------


def metrics_oracle(tp, fp, tn, fn):
    """Plain-fraction metric computation, None where undefined."""
    recall = tp / (tp + fn) if tp + fn else None
    precision = tp / (tp + fp) if tp + fp else None
    tnr = tn / (tn + fp) if tn + fp else None
    balanced = (recall + tnr) / 2 if recall is not None and tnr is not None else None
    f1 = 2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn else None
    return balanced, precision, recall, f1


def pearson_oracle(xs, ys):
    """Textbook sample correlation with fsum accumulation."""
    n = len(xs)
    mx = math.fsum(xs) / n
    my = math.fsum(ys) / n
    num = math.fsum((a - mx) * (b - my) for a, b in zip(xs, ys))
    dx = math.sqrt(math.fsum((a - mx) ** 2 for a in xs))
    dy = math.sqrt(math.fsum((b - my) ** 2 for b in ys))
    return num / (dx * dy)


# ---------------------------------------------------------------------------
# fixtures
# ---------------------------------------------------------------------------


def make_bundle(n_side=16, flip_blocks=(), seed=0, slide_id="s0", calib=None, spread=0.1):
    """Square all-tissue slide, right half tumor, optional wrong-score blocks.

    Latents always separate by ground truth; ``flip_blocks`` (i0, i1,
    j0, j1 in cell coordinates) get inverted rough scores so the rough
    segmentation contains localized FP and FN regions to correct.
    """
    spec = PatchSpec(32, 0.5)
    extent = 16 * (n_side - 1) + 32
    grid = build_grid((extent, extent), np.ones((extent, extent), bool), spec)
    rng = np.random.default_rng(seed)
    n = len(grid.patches)
    truth = np.array([p.j >= n_side // 2 for p in grid.patches], dtype=bool)
    latents = rng.normal(0, spread, (n, 4))
    latents[:, 0] += np.where(truth, 1.0, -1.0)
    observed = truth.copy()
    for i0, i1, j0, j1 in flip_blocks:
        for p in grid.patches:
            if i0 <= p.i < i1 and j0 <= p.j < j1:
                observed[p.id] = not truth[p.id]
    scores = np.clip(np.where(observed, 0.9, 0.1) + rng.normal(0, 0.02, n), 0.01, 0.99)
    mc = np.clip(scores[:, None] + rng.normal(0, 0.01, (n, 8)), 0.01, 0.99)
    records = [
        McRecord(
            patch_id=p.id,
            features=latents[p.id],
            mc_scores=mc[p.id],
            score=float(scores[p.id]),
            x=p.x,
            y=p.y,
        )
        for p in grid.patches
    ]
    return SlideBundle(
        slide_id=slide_id, grid=grid, records=records, truth=truth, t_thresh=0.5, calib=calib
    )


def perfect_bundle(seed=0, slide_id="perfect"):
    return make_bundle(seed=seed, slide_id=slide_id)


def flawed_bundle(seed=0, slide_id="flawed", calib=None):
    # one FP block left of the boundary, one FN block right of it
    return make_bundle(
        flip_blocks=((3, 6, 2, 6), (9, 12, 10, 14)),
        seed=seed,
        slide_id=slide_id,
        calib=calib,
    )


# ---------------------------------------------------------------------------
# confusion
# ---------------------------------------------------------------------------


class TestConfusion:
    def test_perfect_prediction(self):
        truth = np.array([1, 0, 1, 0, 1], bool)
        c = confusion(truth, truth)
        assert (c.fp, c.fn) == (0, 0)
        assert (c.tp, c.tn) == (3, 2)

    def test_all_positive_on_half_positive(self):
        truth = np.array([True] * 5 + [False] * 5)
        c = confusion(np.ones(10, bool), truth)
        assert c.tn == 0 and c.fp == 5 and c.tp == 5 and c.fn == 0

    def test_hand_case_stored_exactly(self):
        pred = np.array([1] * 110 + [0] * 90, bool)
        truth = np.array([1] * 90 + [0] * 20 + [0] * 80 + [1] * 10, bool)
        c = confusion(pred, truth)
        assert (c.tp, c.fp, c.tn, c.fn) == (90, 20, 80, 10)

    def test_total_is_grid_size(self):
        rng = np.random.default_rng(3)
        pred = rng.random(257) > 0.4
        truth = rng.random(257) > 0.6
        assert confusion(pred, truth).total == 257

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            confusion(np.ones(4, bool), np.ones(5, bool))

    def test_negative_count_rejected(self):
        with pytest.raises(ValueError):
            Confusion(tp=1, fp=-1, tn=0, fn=0)


class TestWsiMetrics:
    def test_hand_case(self):
        m = wsi_metrics(Confusion(tp=90, fp=20, tn=80, fn=10))
        assert m.recall == pytest.approx(0.900, abs=1e-4)
        assert m.precision == pytest.approx(0.8182, abs=1e-4)
        assert m.balanced_accuracy == pytest.approx(0.850, abs=1e-4)
        assert m.f1 == pytest.approx(0.8571, abs=1e-4)

    def test_perfect_confusion_all_ones(self):
        m = wsi_metrics(Confusion(tp=7, fp=0, tn=5, fn=0))
        assert m.as_dict() == {name: 1.0 for name in METRIC_NAMES}

    def test_matches_oracle_on_random_counts(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            tp, fp, tn, fn = (int(v) for v in rng.integers(0, 40, 4))
            m = wsi_metrics(Confusion(tp=tp, fp=fp, tn=tn, fn=fn))
            for got, want in zip(
                (m.balanced_accuracy, m.precision, m.recall, m.f1),
                metrics_oracle(tp, fp, tn, fn),
            ):
                if want is None:
                    assert math.isnan(got)
                else:
                    assert got == pytest.approx(want, abs=1e-12)

    def test_undefined_marked_not_zeroed(self):
        m = wsi_metrics(Confusion(tp=0, fp=0, tn=5, fn=0))
        assert math.isnan(m.recall) and math.isnan(m.precision) and math.isnan(m.f1)
        assert math.isnan(m.balanced_accuracy)

    def test_perfect_iff_no_errors(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            tp, tn = (int(v) for v in rng.integers(1, 30, 2))
            fp, fn = (int(v) for v in rng.integers(0, 4, 2))
            m = wsi_metrics(Confusion(tp=tp, fp=fp, tn=tn, fn=fn))
            perfect = fp == 0 and fn == 0
            assert (m.balanced_accuracy == 1.0 and m.f1 == 1.0) == perfect


class TestPearson:
    def test_perfect_positive_linear(self):
        xs = np.arange(10.0)
        assert pearson(xs, 2 * xs + 1) == pytest.approx(1.0, abs=1e-12)

    def test_perfect_negative(self):
        xs = np.arange(5.0)
        assert pearson(xs, -xs) == pytest.approx(-1.0, abs=1e-12)

    def test_hand_triple(self):
        r = pearson([0, 1, 2], [0, 1, 4])
        assert r == pytest.approx(0.9608, abs=1e-3)
        assert r == pytest.approx(pearson_oracle([0, 1, 2], [0, 1, 4]), abs=1e-12)

    def test_matches_oracle_on_random_series(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            xs = rng.normal(0, 3, 17)
            ys = rng.normal(1, 2, 17)
            assert pearson(xs, ys) == pytest.approx(pearson_oracle(xs, ys), abs=1e-12)

    def test_symmetric(self):
        rng = np.random.default_rng(9)
        xs, ys = rng.random(12), rng.random(12)
        assert pearson(xs, ys) == pytest.approx(pearson(ys, xs), abs=1e-15)

    def test_affine_invariance_and_sign_flip(self):
        rng = np.random.default_rng(13)
        xs, ys = rng.random(20), rng.random(20)
        r = pearson(xs, ys)
        assert pearson(3.5 * xs + 2.0, ys) == pytest.approx(r, abs=1e-12)
        assert pearson(-2.0 * xs, ys) == pytest.approx(-r, abs=1e-12)

    def test_range(self):
        rng = np.random.default_rng(21)
        for _ in range(30):
            assert -1.0 <= pearson(rng.random(6), rng.random(6)) <= 1.0

    def test_too_short_rejected(self):
        with pytest.raises(ValueError):
            pearson([0, 1], [1, 2])

    def test_constant_series_rejected(self):
        with pytest.raises(DegenerateInputError):
            pearson([1.0, 1.0, 1.0], [0.0, 1.0, 2.0])
        with pytest.raises(DegenerateInputError):
            pearson([0.0, 1.0, 2.0], [4.0, 4.0, 4.0])


# ---------------------------------------------------------------------------
# simulate_run
# ---------------------------------------------------------------------------


class TestSimulateRun:
    def test_perfect_rough_stops_early(self):
        result = simulate_run(perfect_bundle(), CorrectionPolicy(mode="naive"), n_pass=4, seed=1)
        assert result.early_stop_pass == 1
        assert len(result.passes) == 5
        assert all(p.metrics.f1 == 1.0 for p in result.passes)
        assert all(p.n_epoch is None for p in result.passes)

    def test_pass_zero_is_rough_threshold(self):
        bundle = flawed_bundle()
        result = simulate_run(bundle, CorrectionPolicy(mode="naive"), n_pass=1, seed=2)
        scores = np.array([r.score for r in bundle.records])
        want = confusion(scores > bundle.t_thresh, bundle.truth)
        assert result.passes[0].counts == want

    def test_correction_improves_f1(self):
        result = simulate_run(flawed_bundle(), CorrectionPolicy(mode="naive"), n_pass=4, seed=3)
        f1 = result.f1_per_pass
        assert f1[0] < 0.95
        assert f1[-1] > f1[0] + 0.04
        assert f1[-1] >= 0.95

    def test_entry_count_invariant(self):
        for n_pass in (1, 2, 4):
            result = simulate_run(
                flawed_bundle(), CorrectionPolicy(mode="naive"), n_pass=n_pass, seed=4
            )
            assert len(result.passes) == n_pass + 1
            assert [p.pass_index for p in result.passes] == list(range(n_pass + 1))

    def test_no_correction_after_early_stop(self):
        result = simulate_run(flawed_bundle(), CorrectionPolicy(mode="naive"), n_pass=4, seed=5)
        assert result.early_stop_pass is not None
        stable = result.passes[result.early_stop_pass - 1]
        for pm in result.passes[result.early_stop_pass:]:
            assert pm.n_epoch is None
            assert pm.wall_ms == 0.0
            assert pm.counts == stable.counts

    def test_deterministic_given_seed(self):
        a = simulate_run(flawed_bundle(), CorrectionPolicy(mode="naive"), n_pass=3, seed=6)
        b = simulate_run(flawed_bundle(), CorrectionPolicy(mode="naive"), n_pass=3, seed=6)
        assert [p.counts for p in a.passes] == [p.counts for p in b.passes]
        assert a.f1_per_pass == b.f1_per_pass
        assert a.early_stop_pass == b.early_stop_pass

    def test_caller_policy_not_mutated(self):
        policy = CorrectionPolicy(mode="naive", n_epoch_star=5)
        simulate_run(flawed_bundle(), policy, n_pass=2, seed=7)
        assert policy.used == []

    def test_naive_epochs_recorded(self):
        result = simulate_run(
            flawed_bundle(), CorrectionPolicy(mode="naive", n_epoch_star=5), n_pass=2, seed=8
        )
        real = [p.n_epoch for p in result.passes[1:] if p.n_epoch is not None]
        assert real and all(e == 5 for e in real)

    def test_uncertainty_needs_calibration(self):
        with pytest.raises(ValueError):
            simulate_run(flawed_bundle(), CorrectionPolicy(mode="uncertainty"), n_pass=1, seed=9)

    def test_uncertainty_epochs_in_range(self):
        bundle = flawed_bundle(calib=Calibration(0.05, 0.95))
        policy = CorrectionPolicy(mode="uncertainty", n_epoch_star=10)
        result = simulate_run(bundle, policy, n_pass=3, seed=10)
        real = [p.n_epoch for p in result.passes[1:] if p.n_epoch is not None]
        assert real
        assert all(1 <= e <= 20 for e in real)

    def test_truth_length_mismatch_rejected(self):
        bundle = perfect_bundle()
        bundle.truth = bundle.truth[:-1]
        with pytest.raises(ValueError):
            simulate_run(bundle, CorrectionPolicy(mode="naive"), n_pass=1, seed=0)

    def test_wall_clock_recorded(self):
        result = simulate_run(flawed_bundle(), CorrectionPolicy(mode="naive"), n_pass=1, seed=11)
        assert result.passes[1].wall_ms > 0.0


# ---------------------------------------------------------------------------
# corpus_experiment
# ---------------------------------------------------------------------------


class TestCorpusExperiment:
    def test_single_perfect_slide_all_ones(self):
        table = corpus_experiment([perfect_bundle()], CorrectionPolicy(mode="naive"), runs=3, n_pass=2)
        assert np.all(table.means == 1.0)
        assert np.all(table.stds == 0.0)

    def test_shapes_and_run_count(self):
        bundles = [flawed_bundle(seed=0, slide_id="a"), flawed_bundle(seed=1, slide_id="b")]
        table = corpus_experiment(bundles, CorrectionPolicy(mode="naive"), runs=2, n_pass=3)
        assert table.means.shape == (4, len(METRIC_NAMES))
        assert table.stds.shape == (4, len(METRIC_NAMES))
        assert len(table.results) == 4

    def test_deterministic(self):
        bundles = [flawed_bundle(seed=0, slide_id="a"), flawed_bundle(seed=1, slide_id="b")]
        t1 = corpus_experiment(bundles, CorrectionPolicy(mode="naive"), runs=2, n_pass=2)
        t2 = corpus_experiment(bundles, CorrectionPolicy(mode="naive"), runs=2, n_pass=2)
        assert np.array_equal(t1.means, t2.means)
        assert np.array_equal(t1.stds, t2.stds)

    def test_bundle_order_irrelevant(self):
        a = flawed_bundle(seed=0, slide_id="a")
        b = flawed_bundle(seed=1, slide_id="b")
        t1 = corpus_experiment([a, b], CorrectionPolicy(mode="naive"), runs=2, n_pass=2)
        t2 = corpus_experiment([b, a], CorrectionPolicy(mode="naive"), runs=2, n_pass=2)
        assert np.array_equal(t1.means, t2.means)
        assert np.array_equal(t1.stds, t2.stds)

    def test_aggregates_recomputable_from_results(self):
        bundles = [flawed_bundle(seed=0, slide_id="a"), flawed_bundle(seed=1, slide_id="b")]
        table = corpus_experiment(bundles, CorrectionPolicy(mode="naive"), runs=3, n_pass=2)
        col = METRIC_NAMES.index("f1")
        for p in range(3):
            values = sorted(r.passes[p].metrics.f1 for r in table.results)
            values = [v for v in values if not math.isnan(v)]
            want = math.fsum(values) / len(values)
            assert table.means[p, col] == pytest.approx(want, abs=1e-9)

    def test_spread_is_mean_of_per_slide_stds(self):
        bundles = [flawed_bundle(seed=0, slide_id="a"), flawed_bundle(seed=1, slide_id="b")]
        table = corpus_experiment(bundles, CorrectionPolicy(mode="naive"), runs=4, n_pass=1)
        col = METRIC_NAMES.index("f1")
        per_slide = []
        for sid in ("a", "b"):
            vals = np.array(
                [r.passes[1].metrics.f1 for r in table.results if r.slide_id == sid]
            )
            per_slide.append(float(np.std(vals)))
        assert table.stds[1, col] == pytest.approx(np.mean(per_slide), abs=1e-9)

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            corpus_experiment([], CorrectionPolicy(mode="naive"))

    def test_bad_runs_rejected(self):
        with pytest.raises(ValueError):
            corpus_experiment([perfect_bundle()], CorrectionPolicy(mode="naive"), runs=0)


class TestTuneNEpoch:
    def test_single_candidate(self):
        out = tune_n_epoch([7], [flawed_bundle()], n_pass=1, runs=1)
        assert out.best == 7
        assert set(out.scores) == {7}

    def test_tie_takes_smallest(self):
        out = tune_n_epoch([9, 2, 5], [perfect_bundle()], n_pass=1, runs=1)
        assert out.best == 2
        assert all(v == 1.0 for v in out.scores.values())

    def test_duplicates_collapsed(self):
        out = tune_n_epoch([5, 5, 2], [perfect_bundle()], n_pass=1, runs=1)
        assert sorted(out.scores) == [2, 5]

    def test_empty_grid_rejected(self):
        with pytest.raises(ValueError):
            tune_n_epoch([], [perfect_bundle()])


# ---------------------------------------------------------------------------
# exports
# ---------------------------------------------------------------------------


def small_table():
    means = np.array([[0.5, 0.6, 0.7, 0.8], [0.9, 0.91, 0.92, math.nan]])
    stds = np.array([[0.01, 0.02, 0.03, 0.04], [0.0, 0.0, 0.0, math.nan]])
    return ExperimentTable(
        policy_mode="naive", n_epoch_star=30, runs=2, n_pass=1, means=means, stds=stds
    )


class TestExports:
    def test_run_results_json_deterministic(self, tmp_path):
        result = simulate_run(flawed_bundle(), CorrectionPolicy(mode="naive"), n_pass=2, seed=1)
        p1, p2 = tmp_path / "r1.json", tmp_path / "r2.json"
        write_run_results(p1, [result])
        write_run_results(p2, [result])
        assert p1.read_bytes() == p2.read_bytes()
        payload = json.loads(p1.read_text())
        assert payload["version"] == 1
        rows = payload["results"][0]["passes"]
        assert len(rows) == 3
        assert "wall_ms" not in rows[0]

    def test_timings_sidecar_has_wall_clock(self, tmp_path):
        result = simulate_run(flawed_bundle(), CorrectionPolicy(mode="naive"), n_pass=2, seed=1)
        path = tmp_path / "timings.json"
        write_timings(path, [result])
        payload = json.loads(path.read_text())
        assert len(payload["timings"][0]["wall_ms"]) == 3

    def test_nan_metric_serialized_as_null(self, tmp_path):
        from scribbleloop.evalsim import PassMetrics, RunResult

        counts = Confusion(tp=0, fp=0, tn=5, fn=0)
        pm = PassMetrics(
            pass_index=0, counts=counts, metrics=wsi_metrics(counts), n_epoch=None, wall_ms=0.0
        )
        run = RunResult(slide_id="x", policy_mode="naive", seed=0, passes=[pm])
        path = tmp_path / "r.json"
        write_run_results(path, [run])
        text = path.read_text()
        assert "NaN" not in text
        row = json.loads(text)["results"][0]["passes"][0]
        assert row["f1"] is None and row["recall"] is None

    def test_experiment_csv_layout(self, tmp_path):
        path = tmp_path / "table.csv"
        write_experiment_csv(path, small_table())
        lines = path.read_text().strip().splitlines()
        assert len(lines) == 3
        header = lines[0].split(",")
        assert header[0] == "pass"
        assert len(header) == 1 + 2 * len(METRIC_NAMES)
        assert lines[1].split(",")[1] == "0.500000"

    def test_experiment_json_roundtrip(self, tmp_path):
        path = tmp_path / "table.json"
        write_experiment_json(path, small_table())
        payload = json.loads(path.read_text())
        assert payload["metrics"] == list(METRIC_NAMES)
        assert payload["means"][0][0] == 0.5
        assert payload["means"][1][3] is None or math.isnan(payload["means"][1][3])

    def test_markdown_percent_one_decimal(self):
        text = experiment_markdown(small_table())
        assert "| rough | 50.0 ± 1.0 | 60.0 ± 2.0 | 70.0 ± 3.0 | 80.0 ± 4.0 |" in text
        assert "n/a" in text
        assert "90.0 ± 0.0" in text

    def test_markdown_has_header_row(self):
        text = experiment_markdown(small_table())
        assert "Balanced Accuracy(%)" in text and "F1 score(%)" in text

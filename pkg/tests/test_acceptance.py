"""Acceptance suite: every core guarantee of the package in one place.

Each test states a guarantee, re-derives the expected outcome from an
independent oracle (imported from the module test files or computed
inline), and checks the implementation at the full stated scale,
tolerance, and time budget. The heavy end-to-end checks share one
session-scoped corpus and trained model.
"""

import math
import time
from types import SimpleNamespace

import numpy as np
import pytest

from conftest import largest_component, make_blob_mask
from test_backbone import numeric_gradient
from test_corrector import (
    angle_between,
    cell_ids,
    cluster_session,
    line_over_cells,
    max_margin_direction_2d,
)
from test_imageops import otsu_oracle
from scipy.spatial.distance import directed_hausdorff
from test_scribbles import (
    containment_fraction,
    dilate_disc,
    longest_simple_path_oracle,
    random_simple_polygon,
)
from test_tiling import line_scribble
from test_uncertainty import entropy_oracle, record, std_oracle

from scribbleloop.backbone import BackboneModel, TrainConfig, loss_and_gradients
from scribbleloop.cli import main as cli_main
from scribbleloop.corpus import generate_corpus, load_slide
from scribbleloop.corrector import (
    CorrectionPolicy,
    SvmModel,
    apply_correction,
    init_session,
    n_epoch_for,
    svm_fit_epochs,
)
from scribbleloop.evalsim import (
    METRIC_NAMES,
    confusion,
    corpus_experiment,
    pearson,
    wsi_metrics,
)
from scribbleloop.imageops import otsu_threshold
from scribbleloop.pipeline import (
    bundles_for_split,
    calibration_from_split,
    predict_slide,
    store_calibration,
    train_rough,
)
from scribbleloop.scribbles import (
    KIND_CORRECTIVE_FN,
    KIND_CORRECTIVE_FP,
    ScribbleParams,
    longest_triangle_path,
    synth_scribble,
    triangulate_polygon,
)
from scribbleloop.tiling import PatchSpec, patches_along_scribble
from scribbleloop.uncertainty import patch_entropy, patch_std, signed_map

F1 = METRIC_NAMES.index("f1")


def otsu_exhaustive(hist) -> int:
    """All 256 splits scored with plain-Python running sums.

    Same exhaustive scan as the quadratic oracle in the image-ops
    tests, reformulated with prefix totals so a thousand histograms
    stay inside the time budget.
    """
    hist = [float(h) for h in hist]
    total = sum(hist)
    weighted_total = sum(g * h for g, h in enumerate(hist))
    occupied = [g for g, h in enumerate(hist) if h > 0]
    if len(occupied) == 1:
        return occupied[0]
    best_t, best_v = 0, -1.0
    w0 = 0.0
    m0 = 0.0
    for t in range(256):
        if t > 0:
            w0 += hist[t - 1]
            m0 += (t - 1) * hist[t - 1]
        w1 = total - w0
        if w0 == 0.0 or w1 == 0.0:
            v = 0.0
        else:
            mu0 = m0 / w0
            mu1 = (weighted_total - m0) / w1
            v = (w0 / total) * (w1 / total) * (mu0 - mu1) ** 2
        if v > best_v + 1e-12:
            best_v, best_t = v, t
    return best_t


@pytest.fixture(scope="session")
def full_env(tmp_path_factory):
    """Full-scale corpus, trained rough model, and the 24 test bundles."""
    t0 = time.perf_counter()
    root = tmp_path_factory.mktemp("acceptance_corpus")
    manifest = generate_corpus(root, 158, seed=7)
    model, threshold = train_rough(manifest, TrainConfig(seed=1))
    calib = calibration_from_split(manifest, model, threshold, seed=1)
    store_calibration(manifest, calib)
    bundles = bundles_for_split(manifest, model, threshold, split="test", seed=1)
    return SimpleNamespace(
        manifest=manifest,
        model=model,
        threshold=threshold,
        bundles=bundles,
        build_seconds=time.perf_counter() - t0,
    )


# ---------------------------------------------------------------------------
# scribble length law
# ---------------------------------------------------------------------------


class TestScribbleLengthLaw:
    def test_exact_length_yields_exact_patch_count(self):
        t0 = time.perf_counter()
        for w in (32, 512):
            for o_v in (0.0, 0.25, 0.5, 0.75):
                spec = PatchSpec(patch_size=w, overlap=o_v)
                stride = w * (1.0 - o_v)
                assert spec.stride == stride
                for k in range(1, 21):
                    scribble = line_scribble(k * stride)
                    assert len(patches_along_scribble(scribble, spec)) == k
        assert time.perf_counter() - t0 < 1.0


# ---------------------------------------------------------------------------
# geometry against exhaustive search
# ---------------------------------------------------------------------------


class TestGeometryOracles:
    def test_longest_path_and_otsu_match_exhaustive_search(self):
        t0 = time.perf_counter()

        rng = np.random.default_rng(424)
        for _ in range(200):
            n_c = int(rng.integers(4, 16))
            poly = random_simple_polygon(rng, n_c)
            tri = triangulate_polygon(poly)
            path = longest_triangle_path(tri)
            assert len(set(path)) == len(path)
            for a, b in zip(path, path[1:]):
                assert b in tri.dual[a]
            assert len(path) - 1 == longest_simple_path_oracle(tri.dual)

        rng = np.random.default_rng(425)
        checked_against_slow_oracle = 0
        for k in range(1000):
            if k % 3 == 0:
                hist = np.zeros(256)
                levels = rng.choice(256, size=int(rng.integers(2, 12)), replace=False)
                hist[levels] = rng.integers(1, 200, size=len(levels))
            else:
                hist = rng.integers(0, 60, size=256).astype(float)
            expected = otsu_exhaustive(hist)
            if k < 25:
                # guard the fast exhaustive oracle with the quadratic one
                assert expected == otsu_oracle(hist)
                checked_against_slow_oracle += 1
            assert otsu_threshold(hist) == expected
        assert checked_against_slow_oracle == 25

        assert time.perf_counter() - t0 < 30.0


# ---------------------------------------------------------------------------
# scribble validity over many components
# ---------------------------------------------------------------------------


class TestScribbleValidity:
    def test_containment_and_seed_diversity_on_100_components(self):
        t0 = time.perf_counter()
        for seed in range(100):
            mask = make_blob_mask(seed)
            comp = largest_component(mask)
            region = dilate_disc(comp.full_mask(mask.shape), 2)
            s_a = synth_scribble(comp, ScribbleParams(seed=seed))
            s_b = synth_scribble(comp, ScribbleParams(seed=seed + 1000))
            assert containment_fraction(s_a.polyline.points, region) >= 0.98
            assert containment_fraction(s_b.polyline.points, region) >= 0.98
            gap = max(
                directed_hausdorff(s_a.polyline.points, s_b.polyline.points)[0],
                directed_hausdorff(s_b.polyline.points, s_a.polyline.points)[0],
            )
            assert gap > 0.0
        assert time.perf_counter() - t0 < 60.0


# ---------------------------------------------------------------------------
# uncertainty closed forms and bulk properties
# ---------------------------------------------------------------------------


class TestUncertaintyMeasures:
    def test_closed_forms_and_random_vector_properties(self):
        t0 = time.perf_counter()

        assert patch_entropy([0.5, 0.5]) == pytest.approx(1.0, abs=1e-4)
        assert patch_entropy([0.9] * 20) == pytest.approx(0.4690, abs=1e-4)
        assert patch_entropy([0.9] * 20) == pytest.approx(entropy_oracle(0.9), abs=1e-9)
        assert patch_std([0.2, 0.4, 0.6, 0.8]) == pytest.approx(0.2236, abs=1e-4)
        assert patch_std([0.2, 0.4, 0.6, 0.8]) == pytest.approx(
            std_oracle([0.2, 0.4, 0.6, 0.8]), abs=1e-9
        )
        signed = signed_map([record(0, [0.2] * 10)], t_thresh=0.33)
        assert signed[0] == pytest.approx(-0.7219, abs=1e-4)
        assert signed[0] == pytest.approx(-entropy_oracle(0.2), abs=1e-9)

        rng = np.random.default_rng(77)
        vectors = rng.random((100_000, 8))
        for x in vectors:
            h = patch_entropy(x)
            assert 0.0 <= h <= 1.0
            assert patch_entropy(1.0 - x) == pytest.approx(h, abs=1e-12)
            assert 0.0 <= patch_std(x) <= 0.5

        assert time.perf_counter() - t0 < 10.0


# ---------------------------------------------------------------------------
# epoch budget arithmetic
# ---------------------------------------------------------------------------


class TestEpochBudget:
    def test_closed_cases_with_clamp_floor(self):
        policy = CorrectionPolicy(mode="uncertainty", n_epoch_star=30)
        assert n_epoch_for(policy, h_star=0.0) == 1
        assert n_epoch_for(policy, h_star=0.5) == 30
        assert n_epoch_for(policy, h_star=1.0) == 60


# ---------------------------------------------------------------------------
# learning machinery
# ---------------------------------------------------------------------------


class TestLearningMachinery:
    def test_gradients_and_linear_svm(self):
        t0 = time.perf_counter()

        rng = np.random.default_rng(10)
        model = BackboneModel(
            w1=rng.normal(0, 0.5, size=(6, 5)),
            b1=rng.normal(0, 0.1, size=5),
            w2=rng.normal(0, 0.5, size=5),
            b2=0.1,
            p_dropout=0.0,
        )
        x = rng.random((8, 6))
        y = rng.integers(0, 2, size=8).astype(float)
        _, analytic = loss_and_gradients(model, x, y, mask=None)
        numeric = numeric_gradient(model, x, y)
        for name in ("w1", "b1", "w2"):
            denom = np.maximum(np.abs(numeric[name]), 1e-8)
            assert (np.abs(analytic[name] - numeric[name]) / denom).max() < 1e-4
        assert abs(analytic["b2"] - numeric["b2"]) / max(abs(numeric["b2"]), 1e-8) < 1e-4

        toys = []
        toy_x = np.array([[2.0, 0.3], [3.0, -0.4], [-2.0, 0.5], [-2.5, -0.2]])
        toy_y = np.array([1.0, 1.0, -1.0, -1.0])
        toys.append((toy_x, toy_y))
        for seed in range(6):
            cloud_rng = np.random.default_rng(seed)
            pos = cloud_rng.normal([2.0, 1.0], 0.4, (20, 2))
            neg = cloud_rng.normal([-2.0, -1.0], 0.4, (20, 2))
            toys.append(
                (np.vstack([pos, neg]), np.concatenate([np.ones(20), -np.ones(20)]))
            )
        for seed, (tx, ty) in enumerate(toys):
            oracle_dir, oracle_margin = max_margin_direction_2d(tx, ty)
            if oracle_margin <= 0:
                continue
            svm = SvmModel(w=np.zeros(2))
            svm_fit_epochs(svm, tx, ty, n_epoch=200, seed=seed)
            assert np.all(ty * svm.margin(tx) > 0), "training accuracy below 100%"
            assert angle_between(svm.w, oracle_dir) <= 15.0

        assert time.perf_counter() - t0 < 30.0


# ---------------------------------------------------------------------------
# hard-coded patches dominate every later update
# ---------------------------------------------------------------------------


class TestHardCodeDominance:
    def test_randomized_pass_sequences_never_move_pinned_values(self):
        for sequence_seed in range(5):
            session, grid, _records, _truth = cluster_session(seed=sequence_seed)
            policy = CorrectionPolicy(mode="naive")
            rng = np.random.default_rng(1000 + sequence_seed)
            expected: dict[int, float] = {}
            for _ in range(10):
                i = int(rng.integers(0, 15))
                k = int(rng.integers(2, 6))
                j0 = int(rng.integers(0, 15 - k))
                kind = KIND_CORRECTIVE_FP if rng.random() < 0.5 else KIND_CORRECTIVE_FN
                apply_correction(session, [line_over_cells(grid, i, j0, k, kind)], policy)
                value = 0.0 if kind == KIND_CORRECTIVE_FP else 1.0
                for pid in cell_ids(grid, i, j0, k):
                    expected[pid] = value
                for pid, pinned in expected.items():
                    assert session.heatmap[pid] == pinned
            assert session.passes == 10


# ---------------------------------------------------------------------------
# end-to-end correction on the synthetic test corpus
# ---------------------------------------------------------------------------


@pytest.mark.slow
class TestEndToEndCorrection:
    def test_simulated_correction_improves_f1(self, full_env):
        t0 = time.perf_counter()
        test_entries = full_env.manifest.slides("test")
        assert len(test_entries) == 24
        deltas = [e.recipe.delta for e in test_entries]
        assert min(deltas) >= 0.3 and max(deltas) <= 0.9

        tables = {}
        for mode in ("naive", "uncertainty"):
            tables[mode] = corpus_experiment(
                full_env.bundles,
                CorrectionPolicy(mode=mode),
                runs=10,
                n_pass=4,
                base_seed=3,
            )

        for mode, table in tables.items():
            assert len(table.results) == 24 * 10
            gain = table.means[4, F1] - table.means[0, F1]
            assert gain >= 0.05, f"{mode}: pass-4 gain {gain:.4f} below 0.05"
            nondecreasing = sum(
                1
                for res in table.results
                if all(b >= a for a, b in zip(res.f1_per_pass, res.f1_per_pass[1:]))
            )
            fraction = nondecreasing / len(table.results)
            assert fraction >= 0.90, f"{mode}: monotone fraction {fraction:.3f}"

        assert (
            tables["uncertainty"].means[4, F1] >= tables["naive"].means[4, F1] - 0.01
        )

        total = full_env.build_seconds + (time.perf_counter() - t0)
        assert total <= 600.0


# ---------------------------------------------------------------------------
# slide-level uncertainty predicts rough quality
# ---------------------------------------------------------------------------


@pytest.mark.slow
class TestUncertaintyQualityLink:
    def test_h_wsi_anticorrelates_with_rough_f1(self, full_env):
        from scribbleloop.uncertainty import wsi_uncertainty

        t0 = time.perf_counter()
        h_values, rough_f1 = [], []
        for bundle in full_env.bundles:
            h_values.append(wsi_uncertainty(bundle.records, bundle.t_thresh).h_wsi)
            scores = np.array([r.score for r in bundle.records])
            rough_f1.append(wsi_metrics(confusion(scores > bundle.t_thresh, bundle.truth)).f1)
        r = pearson(h_values, rough_f1)
        assert r < 0.0
        assert abs(r) >= 0.5
        assert time.perf_counter() - t0 <= 120.0


# ---------------------------------------------------------------------------
# interactive latency on a ~4k-patch slide
# ---------------------------------------------------------------------------


@pytest.mark.slow
class TestInteractiveLatency:
    def test_init_and_pass_medians_within_one_second(self, full_env):
        entry = full_env.manifest.slides("test")[0]
        image, _tumor, tissue = load_slide(full_env.manifest, entry.slide_id)
        # full-tissue grid: every cell of the 1024 px slide is retained
        grid, records = predict_slide(
            full_env.model, image, np.ones_like(tissue), seed=0
        )
        assert 3800 <= len(grid.patches) <= 4100
        t_thresh = full_env.threshold.t_thresh

        init_times = []
        for trial in range(20):
            t0 = time.perf_counter()
            init_session(grid, records, t_thresh, slide_id=entry.slide_id, seed=trial)
            init_times.append(time.perf_counter() - t0)
        assert float(np.median(init_times)) <= 1.0

        session = init_session(grid, records, t_thresh, slide_id=entry.slide_id, seed=0)
        policy = CorrectionPolicy(mode="naive", n_epoch_star=30)
        pass_times = []
        for trial, row in enumerate(range(2, 62, 3)):
            kind = KIND_CORRECTIVE_FP if trial % 2 == 0 else KIND_CORRECTIVE_FN
            scribble = line_over_cells(grid, row, 10, 6, kind)
            t0 = time.perf_counter()
            apply_correction(session, [scribble], policy)
            pass_times.append(time.perf_counter() - t0)
        assert len(pass_times) == 20
        assert session.passes == 20
        assert float(np.median(pass_times)) <= 1.0


# ---------------------------------------------------------------------------
# byte-identical reruns
# ---------------------------------------------------------------------------


@pytest.mark.slow
class TestDeterminism:
    def test_gen_train_simulate_are_byte_identical(self, tmp_path):
        from test_cli import tree_digest

        roots = [tmp_path / "a", tmp_path / "b"]
        for root in roots:
            rc = cli_main([
                "gen-corpus", "--data-root", str(root),
                "--slides", "12", "--size", "256", "--seed", "9",
            ])
            assert rc == 0
            rc = cli_main([
                "train", "--data-root", str(root),
                "--seed", "9", "--epochs", "3", "--n-mc", "3",
            ])
            assert rc == 0
            rc = cli_main([
                "simulate", "--data-root", str(root), "--policy", "naive",
                "--runs", "2", "--passes", "2", "--seed", "9",
            ])
            assert rc == 0

        a, b = roots
        assert tree_digest(a / "corpus") == tree_digest(b / "corpus")
        assert (a / "model.json").read_bytes() == (b / "model.json").read_bytes()
        # results are deterministic; the timings sidecar holds wall-clock
        # measurements and is the one file exempt from byte identity
        for name in ("runs_naive.json", "experiment_naive.json", "experiment_naive.csv"):
            assert (a / "results" / name).read_bytes() == (b / "results" / name).read_bytes()
        assert (a / "results" / "timings_naive.json").exists()

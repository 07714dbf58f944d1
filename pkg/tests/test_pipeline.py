"""Tests for the corpus-to-simulation orchestration layer."""

import numpy as np
import pytest

from scribbleloop.backbone import TrainConfig
from scribbleloop.corpus import load_manifest, load_slide, write_manifest
from scribbleloop.errors import DegenerateInputError
from scribbleloop.pipeline import (
    DEFAULT_SPEC,
    bundle_for_slide,
    bundles_for_split,
    calibration_from_split,
    corpus_training_set,
    ground_truth_scribbles,
    manifest_calibration,
    predict_slide,
    scribble_training_set,
    store_calibration,
    train_rough,
)
from scribbleloop.scribbles import CLASS_NON_TUMOR, CLASS_TUMOR, KIND_GROUND_TRUTH
from scribbleloop.tiling import grid_labels


def disk_mask(size, cy, cx, r):
    yy, xx = np.mgrid[:size, :size]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


class TestGroundTruthScribbles:
    def setup_method(self):
        self.tissue = disk_mask(256, 128, 128, 110)
        self.tumor = disk_mask(256, 90, 90, 30) | disk_mask(256, 170, 160, 24)

    def test_one_non_tumor_and_selected_tumor_strokes(self):
        out = ground_truth_scribbles(self.tumor, self.tissue, seed=5)
        classes = [s.class_label for s in out]
        assert classes.count(CLASS_NON_TUMOR) == 1
        assert classes[-1] == CLASS_NON_TUMOR
        assert 1 <= classes.count(CLASS_TUMOR) <= 10
        assert all(s.kind == KIND_GROUND_TRUTH for s in out)

    def test_non_tumor_stroke_avoids_tumor(self):
        out = ground_truth_scribbles(self.tumor, self.tissue, seed=5)
        stroke = next(s for s in out if s.class_label == CLASS_NON_TUMOR)
        pts = np.clip(np.round(stroke.polyline.points).astype(int), 0, 255)
        inside_tumor = self.tumor[pts[:, 1], pts[:, 0]].mean()
        assert inside_tumor < 0.05

    def test_deterministic_per_seed(self):
        a = ground_truth_scribbles(self.tumor, self.tissue, seed=9)
        b = ground_truth_scribbles(self.tumor, self.tissue, seed=9)
        assert len(a) == len(b)
        for s1, s2 in zip(a, b):
            assert np.array_equal(s1.polyline.points, s2.polyline.points)

    def test_seed_changes_strokes(self):
        a = ground_truth_scribbles(self.tumor, self.tissue, seed=1)
        b = ground_truth_scribbles(self.tumor, self.tissue, seed=2)
        assert not np.array_equal(a[0].polyline.points, b[0].polyline.points)

    def test_no_tumor_rejected(self):
        with pytest.raises(DegenerateInputError):
            ground_truth_scribbles(np.zeros((256, 256), bool), self.tissue)

    def test_no_healthy_tissue_rejected(self):
        with pytest.raises(DegenerateInputError):
            ground_truth_scribbles(self.tissue, self.tissue)


class TestScribbleTrainingSet:
    def test_labels_follow_stroke_class(self):
        tissue = disk_mask(256, 128, 128, 110)
        tumor = disk_mask(256, 100, 100, 35)
        rng = np.random.default_rng(0)
        image = rng.integers(0, 256, (256, 256, 3)).astype(np.uint8)
        scribbles = ground_truth_scribbles(tumor, tissue, seed=3)
        x, y = scribble_training_set(image, scribbles, DEFAULT_SPEC)
        assert x.shape[1] == 30
        assert len(x) == len(y)
        assert set(np.unique(y)) == {0, 1}

    def test_empty_scribbles_rejected(self):
        image = np.zeros((64, 64, 3), np.uint8)
        with pytest.raises(DegenerateInputError):
            scribble_training_set(image, [], DEFAULT_SPEC)


class TestCorpusTrainingSet:
    def test_covers_train_split(self, tiny_corpus):
        x, y = corpus_training_set(tiny_corpus, seed=4)
        assert len(x) == len(y) > 200
        assert 0 < y.mean() < 1

    def test_deterministic(self, tiny_corpus):
        x1, y1 = corpus_training_set(tiny_corpus, seed=4)
        x2, y2 = corpus_training_set(tiny_corpus, seed=4)
        assert np.array_equal(x1, x2) and np.array_equal(y1, y2)

    def test_missing_split_rejected(self, tiny_corpus):
        with pytest.raises(DegenerateInputError):
            corpus_training_set(tiny_corpus, split="nope")


class TestTrainRough:
    def test_threshold_in_open_interval(self, trained_rough):
        _, threshold = trained_rough
        assert 0 < threshold.t_thresh < 1
        assert threshold.overlap == DEFAULT_SPEC.overlap

    def test_deterministic(self, tiny_corpus, trained_rough):
        model_a, thr_a = trained_rough
        model_b, thr_b = train_rough(tiny_corpus, TrainConfig(seed=11))
        assert np.array_equal(model_a.w1, model_b.w1)
        assert np.array_equal(model_a.w2, model_b.w2)
        assert thr_a.t_thresh == thr_b.t_thresh

    def test_rough_quality_on_test_slide(self, tiny_corpus, trained_rough):
        from scribbleloop.evalsim import confusion, wsi_metrics

        model, threshold = trained_rough
        entry = tiny_corpus.slides("test")[0]
        image, tumor, tissue = load_slide(tiny_corpus, entry.slide_id)
        grid, records = predict_slide(model, image, tissue, n_mc=5, seed=1)
        scores = np.array([r.score for r in records])
        truth = grid_labels(grid, tumor).astype(bool)
        m = wsi_metrics(confusion(scores > threshold.t_thresh, truth))
        assert m.f1 > 0.5


class TestPredictSlide:
    def test_records_align_with_grid(self, tiny_corpus, trained_rough):
        model, _ = trained_rough
        entry = tiny_corpus.slides("test")[0]
        image, _, tissue = load_slide(tiny_corpus, entry.slide_id)
        grid, records = predict_slide(model, image, tissue, n_mc=5, seed=2)
        assert len(records) == len(grid.patches)
        assert [r.patch_id for r in records] == [p.id for p in grid.patches]
        assert all(len(r.mc_scores) == 5 for r in records)

    def test_deterministic(self, tiny_corpus, trained_rough):
        model, _ = trained_rough
        entry = tiny_corpus.slides("test")[0]
        image, _, tissue = load_slide(tiny_corpus, entry.slide_id)
        _, r1 = predict_slide(model, image, tissue, n_mc=5, seed=2)
        _, r2 = predict_slide(model, image, tissue, n_mc=5, seed=2)
        assert all(np.array_equal(a.mc_scores, b.mc_scores) for a, b in zip(r1, r2))


class TestCalibration:
    def test_range_is_ordered(self, tiny_corpus, trained_rough):
        model, threshold = trained_rough
        calib = calibration_from_split(tiny_corpus, model, threshold, n_mc=5, seed=11)
        assert calib.h_min < calib.h_max

    def test_needs_two_slides(self, tiny_corpus, trained_rough):
        model, threshold = trained_rough
        with pytest.raises(DegenerateInputError):
            calibration_from_split(tiny_corpus, model, threshold, n_mc=5, split="test")

    def test_persists_through_manifest_io(self, calibrated_manifest):
        calib = manifest_calibration(calibrated_manifest)
        assert calib is not None
        assert calib.h_min < calib.h_max

    def test_absent_calibration_is_none(self, tmp_path):
        from scribbleloop.corpus import generate_corpus

        manifest = generate_corpus(tmp_path / "c", 1, seed=1, size=256, split="test")
        assert manifest_calibration(manifest) is None


class TestBundles:
    def test_bundle_fields(self, calibrated_manifest, trained_rough):
        model, threshold = trained_rough
        entry = calibrated_manifest.slides("test")[0]
        bundle = bundle_for_slide(
            calibrated_manifest, entry.slide_id, model, threshold, n_mc=5, seed=3
        )
        assert bundle.slide_id == entry.slide_id
        assert len(bundle.truth) == len(bundle.grid.patches)
        assert bundle.truth.dtype == bool
        assert bundle.t_thresh == threshold.t_thresh
        assert bundle.calib is not None

    def test_split_bundles(self, calibrated_manifest, trained_rough):
        model, threshold = trained_rough
        bundles = bundles_for_split(
            calibrated_manifest, model, threshold, split="val", n_mc=5, seed=3
        )
        assert len(bundles) == 2
        with pytest.raises(DegenerateInputError):
            bundles_for_split(calibrated_manifest, model, threshold, split="nope")

    def test_simulation_runs_on_real_bundle(self, calibrated_manifest, trained_rough):
        from scribbleloop.corrector import CorrectionPolicy
        from scribbleloop.evalsim import simulate_run

        model, threshold = trained_rough
        entry = calibrated_manifest.slides("test")[0]
        bundle = bundle_for_slide(
            calibrated_manifest, entry.slide_id, model, threshold, n_mc=5, seed=3
        )
        result = simulate_run(bundle, CorrectionPolicy(mode="uncertainty"), n_pass=2, seed=5)
        assert len(result.passes) == 3
        assert result.passes[-1].metrics.f1 >= 0.0

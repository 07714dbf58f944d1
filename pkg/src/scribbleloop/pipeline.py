"""End-to-end orchestration over a corpus.

Glues the stages together: synthesize ground-truth scribbles from
masks, build the scribble training set, train the rough classifier,
tune its heatmap threshold on the validation split, run Monte-Carlo
prediction over slide grids, calibrate the slide-level uncertainty
range, and package slides into simulation bundles.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .backbone import (
    BackboneModel,
    McRecord,
    ThresholdConfig,
    TrainConfig,
    descriptors_for_grid,
    extract_descriptor,
    optimize_threshold,
    predict_grid,
    train_on_descriptors,
)
from .corpus import CorpusManifest, load_slide
from .errors import DegenerateInputError
from .evalsim import SlideBundle
from .imageops import connected_components, points_at_arc
from .scribbles import (
    CLASS_NON_TUMOR,
    CLASS_TUMOR,
    KIND_GROUND_TRUTH,
    Scribble,
    ScribbleParams,
    select_tumor_components,
    synth_scribble,
)
from .tiling import PatchGrid, PatchSpec, build_grid, grid_labels, patches_along_scribble
from .uncertainty import Calibration, calibrate, wsi_uncertainty

DEFAULT_SPEC = PatchSpec(patch_size=32, overlap=0.5)
DEFAULT_N_MC = 20


def _seed_of(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


# ---------------------------------------------------------------------------
# ground-truth scribbles
# ---------------------------------------------------------------------------


def _arc_mask_fraction(scribble: Scribble, mask: np.ndarray, samples: int = 256) -> float:
    """Fraction of evenly spaced stroke points landing on set mask pixels."""
    pts = points_at_arc(
        scribble.polyline.points, np.linspace(0.0, scribble.arc_length, samples)
    )
    cols = np.clip(np.round(pts[:, 0]).astype(int), 0, mask.shape[1] - 1)
    rows = np.clip(np.round(pts[:, 1]).astype(int), 0, mask.shape[0] - 1)
    return float(mask[rows, cols].mean())


def ground_truth_scribbles(
    tumor_mask: np.ndarray,
    tissue_mask: np.ndarray,
    params: ScribbleParams | None = None,
    seed: int = 0,
) -> list[Scribble]:
    """Annotation strokes a pathologist would draw on one slide.

    The largest 10% of tumor components (at least one, at most ten)
    each get a tumor scribble; the remaining healthy tissue gets a
    single non-tumor scribble over its largest connected component.
    The healthy region can enclose tumors its outer contour cannot
    see, so the non-tumor stroke is resampled over a few sub-seeds and
    the draw crossing the least tumor area wins.
    """
    params = params or ScribbleParams()
    tumor_mask = np.asarray(tumor_mask).astype(bool)
    tissue_mask = np.asarray(tissue_mask).astype(bool)
    tumor_comps = connected_components(tumor_mask)
    if not tumor_comps:
        raise DegenerateInputError("slide has no tumor components to annotate")
    out = []
    for k, comp in enumerate(select_tumor_components(tumor_comps)):
        p = replace(params, seed=_seed_of(seed, 0, k))
        out.append(synth_scribble(comp, p, CLASS_TUMOR, KIND_GROUND_TRUTH))
    healthy = connected_components(tissue_mask & ~tumor_mask)
    if not healthy:
        raise DegenerateInputError("no healthy tissue remains for the non-tumor scribble")
    largest = min(healthy, key=lambda c: (-c.area, c.label))
    best, best_frac = None, float("inf")
    for k in range(8):
        p = replace(params, seed=_seed_of(seed, 1, k))
        candidate = synth_scribble(largest, p, CLASS_NON_TUMOR, KIND_GROUND_TRUTH)
        frac = _arc_mask_fraction(candidate, tumor_mask)
        if frac < best_frac:
            best, best_frac = candidate, frac
        if best_frac <= 0.01:
            break
    out.append(best)
    return out


def scribble_training_set(
    image: np.ndarray,
    scribbles: list[Scribble],
    spec: PatchSpec = DEFAULT_SPEC,
) -> tuple[np.ndarray, np.ndarray]:
    """Descriptors and labels for the patches under a slide's scribbles.

    Patches inherit the scribble's class: tumor strokes contribute
    positives, non-tumor strokes negatives.
    """
    shape = image.shape[:2]
    xs, ys = [], []
    for scribble in scribbles:
        label = 1 if scribble.class_label == CLASS_TUMOR else 0
        for patch in patches_along_scribble(scribble, spec, slide_shape=shape):
            window = image[patch.y : patch.y + spec.patch_size, patch.x : patch.x + spec.patch_size]
            xs.append(extract_descriptor(window))
            ys.append(label)
    if not xs:
        raise DegenerateInputError("scribbles produced no patches")
    return np.array(xs), np.array(ys, dtype=np.int64)


# ---------------------------------------------------------------------------
# training and prediction
# ---------------------------------------------------------------------------


def slide_scribbles(
    manifest: CorpusManifest,
    slide_id: str,
    params: ScribbleParams | None = None,
    seed: int = 0,
) -> list[Scribble]:
    """Annotation scribbles for one corpus slide.

    The per-slide seed mixes the caller's seed with the slide recipe
    seed, so every slide gets distinct but reproducible strokes.
    """
    entry = manifest.entry(slide_id)
    _image, tumor, tissue = load_slide(manifest, slide_id)
    return ground_truth_scribbles(
        tumor, tissue, params=params, seed=_seed_of(seed, entry.recipe.seed)
    )


def corpus_training_set(
    manifest: CorpusManifest,
    spec: PatchSpec = DEFAULT_SPEC,
    params: ScribbleParams | None = None,
    seed: int = 0,
    split: str = "train",
) -> tuple[np.ndarray, np.ndarray]:
    entries = manifest.slides(split)
    if not entries:
        raise DegenerateInputError(f"corpus has no {split!r} slides")
    xs, ys = [], []
    for entry in entries:
        image, tumor, tissue = load_slide(manifest, entry.slide_id)
        scribbles = ground_truth_scribbles(
            tumor, tissue, params=params, seed=_seed_of(seed, entry.recipe.seed)
        )
        x, y = scribble_training_set(image, scribbles, spec)
        xs.append(x)
        ys.append(y)
    return np.concatenate(xs), np.concatenate(ys)


def predict_slide(
    model: BackboneModel,
    image: np.ndarray,
    tissue_mask: np.ndarray,
    spec: PatchSpec = DEFAULT_SPEC,
    n_mc: int = DEFAULT_N_MC,
    seed: int = 0,
) -> tuple[PatchGrid, list[McRecord]]:
    """Tissue grid plus per-patch MC prediction records for one slide."""
    grid = build_grid(image.shape[:2], tissue_mask, spec)
    descriptors = descriptors_for_grid(image, grid)
    records = predict_grid(model, descriptors, grid, n_mc, seed)
    return grid, records


def train_rough(
    manifest: CorpusManifest,
    cfg: TrainConfig | None = None,
    spec: PatchSpec = DEFAULT_SPEC,
    params: ScribbleParams | None = None,
) -> tuple[BackboneModel, ThresholdConfig]:
    """Train the rough classifier and tune its heatmap threshold.

    Training patches come from ground-truth scribbles on the train
    split; the threshold maximizes F1 of the dropout-free scores over
    every validation-split grid patch.
    """
    cfg = cfg or TrainConfig()
    x, y = corpus_training_set(manifest, spec, params, seed=cfg.seed, split="train")
    model = train_on_descriptors(x, y, cfg)

    val = manifest.slides("val")
    if not val:
        raise DegenerateInputError("corpus has no validation slides to tune the threshold")
    scores, labels = [], []
    for entry in val:
        image, tumor, tissue = load_slide(manifest, entry.slide_id)
        grid = build_grid(image.shape[:2], tissue, spec)
        descriptors = descriptors_for_grid(image, grid)
        scores.append(model.score(descriptors))
        labels.append(grid_labels(grid, tumor))
    threshold = optimize_threshold(np.concatenate(scores), np.concatenate(labels), overlap=spec.overlap)
    return model, threshold


# ---------------------------------------------------------------------------
# calibration and bundles
# ---------------------------------------------------------------------------


def calibration_from_split(
    manifest: CorpusManifest,
    model: BackboneModel,
    threshold: ThresholdConfig,
    spec: PatchSpec = DEFAULT_SPEC,
    n_mc: int = DEFAULT_N_MC,
    seed: int = 0,
    split: str = "val",
) -> Calibration:
    """Slide-level entropy range over a reference split."""
    entries = manifest.slides(split)
    if len(entries) < 2:
        raise DegenerateInputError("calibration needs at least two reference slides")
    values = []
    for entry in entries:
        image, _, tissue = load_slide(manifest, entry.slide_id)
        _, records = predict_slide(
            model, image, tissue, spec, n_mc, seed=_seed_of(seed, entry.recipe.seed)
        )
        values.append(wsi_uncertainty(records, threshold.t_thresh).h_wsi)
    return calibrate(values)


def store_calibration(manifest: CorpusManifest, calib: Calibration, split: str = "val") -> None:
    manifest.calibration = {"h_min": calib.h_min, "h_max": calib.h_max, "split": split}


def manifest_calibration(manifest: CorpusManifest) -> Calibration | None:
    if not manifest.calibration:
        return None
    return Calibration(manifest.calibration["h_min"], manifest.calibration["h_max"])


def bundle_for_slide(
    manifest: CorpusManifest,
    slide_id: str,
    model: BackboneModel,
    threshold: ThresholdConfig,
    spec: PatchSpec = DEFAULT_SPEC,
    n_mc: int = DEFAULT_N_MC,
    seed: int = 0,
) -> SlideBundle:
    """Simulation-ready bundle: grid, MC records, and patch-level truth."""
    entry = manifest.entry(slide_id)
    image, tumor, tissue = load_slide(manifest, slide_id)
    grid, records = predict_slide(
        model, image, tissue, spec, n_mc, seed=_seed_of(seed, entry.recipe.seed)
    )
    truth = grid_labels(grid, tumor).astype(bool)
    return SlideBundle(
        slide_id=slide_id,
        grid=grid,
        records=records,
        truth=truth,
        t_thresh=threshold.t_thresh,
        calib=manifest_calibration(manifest),
    )


def bundles_for_split(
    manifest: CorpusManifest,
    model: BackboneModel,
    threshold: ThresholdConfig,
    split: str = "test",
    spec: PatchSpec = DEFAULT_SPEC,
    n_mc: int = DEFAULT_N_MC,
    seed: int = 0,
) -> list[SlideBundle]:
    entries = manifest.slides(split)
    if not entries:
        raise DegenerateInputError(f"corpus has no {split!r} slides")
    return [
        bundle_for_slide(manifest, e.slide_id, model, threshold, spec, n_mc, seed)
        for e in entries
    ]

"""
Interactive correction loop
===========================

Simulates a user fixing a rough heatmap: each pass scribbles over the
largest false-positive and false-negative regions, the scribbled
patches are pinned, and a linear SVM refits the rest of the heatmap.
Compares the fixed epoch budget against the uncertainty-scaled one.
"""

from pathlib import Path

import numpy as np

from scribbleloop.backbone import TrainConfig, load_model, save_model
from scribbleloop.corpus import generate_corpus, load_manifest
from scribbleloop.corrector import CorrectionPolicy
from scribbleloop.evalsim import simulate_run
from scribbleloop.pipeline import (
    bundle_for_slide,
    calibration_from_split,
    store_calibration,
    train_rough,
)

out = Path("demo_output")
data = out / "data"

# -- 1. corpus, checkpoint, and uncertainty calibration -----------------------
if not (data / "corpus" / "manifest.json").exists():
    generate_corpus(data / "corpus", 24, seed=1, size=256, delta_range=(0.25, 0.9))
manifest = load_manifest(data / "corpus")
if (data / "model.json").exists():
    model, threshold = load_model(data / "model.json")
else:
    model, threshold = train_rough(manifest, TrainConfig(epochs=20, seed=1))
    save_model(data / "model.json", model, threshold)

# the calibration maps slide-level entropy onto [0, 1] so it can scale
# the SVM's epoch budget
calib = calibration_from_split(manifest, model, threshold, n_mc=10, seed=1)
store_calibration(manifest, calib)
print(f"calibration range [{calib.h_min:.3f}, {calib.h_max:.3f}]")

# -- 2. the murkiest and the clearest test slide -----------------------------------
by_delta = sorted(manifest.slides("test"), key=lambda e: e.recipe.delta)
extremes = [by_delta[0], by_delta[-1]]

# -- 3. four correction passes under each policy ---------------------------------
# pass 0 is the untouched rough heatmap; each later pass stages one
# scribble over the largest remaining FP region and one over the
# largest FN region, then refits
for entry in extremes:
    bundle = bundle_for_slide(manifest, entry.slide_id, model, threshold, n_mc=10, seed=1)
    print(f"{entry.slide_id} (delta {entry.recipe.delta:.2f}): "
          f"{len(bundle.grid.patches)} patches")
    for mode in ("naive", "uncertainty"):
        result = simulate_run(bundle, CorrectionPolicy(mode=mode), n_pass=4, seed=1)
        print(f"  policy={mode}")
        for pm in result.passes:
            budget = "-" if pm.n_epoch is None else f"{pm.n_epoch:2d}"
            print(f"    pass {pm.pass_index}: F1 {pm.metrics.f1:.3f}  n_epoch {budget}")
        gain = result.passes[-1].metrics.f1 - result.passes[0].metrics.f1
        print(f"    F1 gain after 4 passes: {gain:+.3f}")
    print()

print("the naive policy always refits for 30 epochs; the uncertainty policy")
print("spends more where the slide is murky and less where it is confident")

"""
Rough classifier training and heatmap prediction
================================================

Trains the dropout patch classifier on scribble-supervised patches,
scores a held-out slide with Monte Carlo forward passes, and saves the
resulting tumor-probability heatmap.
"""

from pathlib import Path

import numpy as np
from PIL import Image

from scribbleloop.backbone import TrainConfig, load_model, save_model
from scribbleloop.corpus import generate_corpus, load_manifest, load_slide
from scribbleloop.evalsim import confusion, wsi_metrics
from scribbleloop.pipeline import predict_slide, train_rough
from scribbleloop.tiling import grid_labels

out = Path("demo_output")
data = out / "data"

# -- 1. corpus and checkpoint, created once and reused by later demos --------
# deltas span the difficulty dial, so crisp and murky slides coexist
if (data / "corpus" / "manifest.json").exists():
    manifest = load_manifest(data / "corpus")
    print(f"reusing corpus at {data / 'corpus'}")
else:
    manifest = generate_corpus(data / "corpus", 24, seed=1, size=256,
                               delta_range=(0.25, 0.9))
    print(f"generated {len(manifest.entries)} slides at {data / 'corpus'}")

if (data / "model.json").exists():
    model, threshold = load_model(data / "model.json")
    print("reusing trained checkpoint")
else:
    # scribbles are synthesized from the masks of the train split, and
    # the decision threshold comes from F1 on the validation split
    model, threshold = train_rough(manifest, TrainConfig(epochs=20, seed=1))
    save_model(data / "model.json", model, threshold)
    print("trained rough classifier from synthetic scribbles")
print(f"decision threshold t_thresh = {threshold.t_thresh:.2f}")

# -- 2. score the murkiest held-out slide ---------------------------------------
entry = min(manifest.slides("val"), key=lambda e: e.recipe.delta)
image, tumor, tissue = load_slide(manifest, entry.slide_id)
grid, records = predict_slide(model, image, tissue, n_mc=10, seed=0)
scores = np.array([r.score for r in records])
print(f"\n{entry.slide_id} (delta {entry.recipe.delta:.2f}): "
      f"{len(grid.patches)} tissue patches")

# -- 3. compare against ground truth -------------------------------------------
truth = grid_labels(grid, tumor).astype(bool)
m = wsi_metrics(confusion(scores > threshold.t_thresh, truth))
print(f"rough segmentation: F1 {m.f1:.3f}, precision {m.precision:.3f}, "
      f"recall {m.recall:.3f}")

# -- 4. paint the heatmap over the patch grid ----------------------------------
# blue (healthy) to red (tumor), gray where there is no tissue patch
heat = np.zeros((grid.n_rows, grid.n_cols, 3), dtype=np.uint8)
heat[:, :] = (40, 40, 40)
for patch, score in zip(grid.patches, scores):
    heat[patch.i, patch.j] = (int(255 * score), 40, int(255 * (1 - score)))
Image.fromarray(heat).resize((256, 256), Image.NEAREST).save(out / "rough_heatmap.png")
print(f"wrote {out / 'rough_heatmap.png'}")

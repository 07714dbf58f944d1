"""
Monte Carlo dropout uncertainty
===============================

Computes per-patch predictive entropy from repeated stochastic forward
passes, signs it by the decision threshold, aggregates it per slide,
and shows that uncertain slides are the badly segmented ones.
"""

from pathlib import Path

import numpy as np
from PIL import Image

from scribbleloop.backbone import TrainConfig, load_model, save_model
from scribbleloop.corpus import generate_corpus, load_manifest, load_slide
from scribbleloop.evalsim import confusion, pearson, wsi_metrics
from scribbleloop.pipeline import predict_slide, train_rough
from scribbleloop.tiling import grid_labels
from scribbleloop.uncertainty import patch_entropy, signed_map, wsi_uncertainty

out = Path("demo_output")
data = out / "data"

# -- 1. same corpus and checkpoint as the training demo ----------------------
if not (data / "corpus" / "manifest.json").exists():
    generate_corpus(data / "corpus", 24, seed=1, size=256, delta_range=(0.25, 0.9))
manifest = load_manifest(data / "corpus")
if (data / "model.json").exists():
    model, threshold = load_model(data / "model.json")
else:
    model, threshold = train_rough(manifest, TrainConfig(epochs=20, seed=1))
    save_model(data / "model.json", model, threshold)
t = threshold.t_thresh

# -- 2. entropy in closed form ------------------------------------------------
# the measure is the binary entropy of the Monte Carlo mean score:
# certain patches score 0, maximally ambiguous patches score 1
for mc in ([0.5, 0.5], [0.9] * 5, [0.99] * 5):
    print(f"entropy of MC scores {mc[:2]}...: {patch_entropy(mc):.4f}")

# -- 3. a signed map for one slide ---------------------------------------------
# sign says which error the ambiguity threatens: positive means the
# patch is called tumor (potential false positive), negative means it
# is called healthy (potential false negative)
entry = min(manifest.slides("val"), key=lambda e: e.recipe.delta)
image, tumor, tissue = load_slide(manifest, entry.slide_id)
grid, records = predict_slide(model, image, tissue, n_mc=10, seed=0)
signed = signed_map(records, t)
print(f"\n{entry.slide_id}: signed uncertainty in "
      f"[{signed.min():.3f}, {signed.max():.3f}]")

panel = np.zeros((grid.n_rows, grid.n_cols, 3), dtype=np.uint8)
panel[:, :] = (40, 40, 40)
for patch, value in zip(grid.patches, signed):
    mag = int(255 * abs(value))
    panel[patch.i, patch.j] = (mag, 30, 30) if value > 0 else (30, 30, mag)
Image.fromarray(panel).resize((256, 256), Image.NEAREST).save(out / "signed_uncertainty.png")
print(f"wrote {out / 'signed_uncertainty.png'}")

# -- 4. slide-level aggregate against rough quality -----------------------------
# H_WSI averages entropy over the predicted-tumor patches; slides where
# the rough model struggles should carry more of it
print("\nslide        H_WSI   rough F1")
h_values, f1_values = [], []
for entry in manifest.slides():
    image, tumor, tissue = load_slide(manifest, entry.slide_id)
    grid, records = predict_slide(model, image, tissue, n_mc=10, seed=0)
    wsi = wsi_uncertainty(records, t)
    truth = grid_labels(grid, tumor).astype(bool)
    scores = np.array([r.score for r in records])
    f1 = wsi_metrics(confusion(scores > t, truth)).f1
    h_values.append(wsi.h_wsi)
    f1_values.append(f1)
    print(f"{entry.slide_id}  {wsi.h_wsi:.4f}  {f1:.3f}")

print(f"\nPearson(H_WSI, rough F1) = {pearson(h_values, f1_values):.3f} "
      "(uncertain slides segment worse)")

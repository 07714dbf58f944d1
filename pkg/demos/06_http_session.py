"""
Annotation sessions over HTTP
=============================

Boots the correction service on an ephemeral port, then walks one full
annotation round trip with plain urllib: list slides, open a session,
stage a corrective scribble, run a pass, and read the metric history.
"""

import json
import socket
import threading
import time
import urllib.request
from pathlib import Path

import uvicorn

from scribbleloop.backbone import TrainConfig, load_model, save_model
from scribbleloop.corpus import generate_corpus, load_manifest, write_manifest
from scribbleloop.pipeline import calibration_from_split, store_calibration, train_rough
from scribbleloop.server import create_app

out = Path("demo_output")
data = out / "data"

# -- 1. a served data root needs a corpus, a checkpoint, and calibration ------
if not (data / "corpus" / "manifest.json").exists():
    generate_corpus(data / "corpus", 24, seed=1, size=256, delta_range=(0.25, 0.9))
manifest = load_manifest(data / "corpus")
if (data / "model.json").exists():
    model, threshold = load_model(data / "model.json")
else:
    model, threshold = train_rough(manifest, TrainConfig(epochs=20, seed=1))
    save_model(data / "model.json", model, threshold)
if manifest.calibration is None:
    calib = calibration_from_split(manifest, model, threshold, n_mc=10, seed=1)
    store_calibration(manifest, calib)
    write_manifest(manifest)
    print("stored uncertainty calibration in the manifest")

# -- 2. serve on an ephemeral port in a background thread ----------------------
sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
sock.bind(("127.0.0.1", 0))
port = sock.getsockname()[1]
server = uvicorn.Server(uvicorn.Config(create_app(data), log_level="error"))
thread = threading.Thread(target=server.run, kwargs={"sockets": [sock]}, daemon=True)
thread.start()
base = f"http://127.0.0.1:{port}"


def get(path):
    with urllib.request.urlopen(base + path, timeout=10) as resp:
        return json.loads(resp.read())


def post(path, body):
    req = urllib.request.Request(
        base + path,
        data=json.dumps(body).encode(),
        headers={"Content-Type": "application/json"},
        method="POST",
    )
    with urllib.request.urlopen(req, timeout=30) as resp:
        return json.loads(resp.read())


for _ in range(100):
    try:
        slides = get("/slides")["slides"]
        break
    except OSError:
        time.sleep(0.1)
print(f"serving {len(slides)} slides on {base}")

# -- 3. open a session on the murkiest test slide ---------------------------------
entry = min(manifest.slides("test"), key=lambda e: e.recipe.delta)
slide_id = entry.slide_id
session = post("/sessions", {"slide_id": slide_id, "mode": "uncertainty"})
sid = session["session_id"]
print(f"\nsession {sid[:8]}... on {slide_id}: {session['n_patches']} patches, "
      f"t_thresh {session['t_thresh']:.2f}, H_WSI {session['h_wsi']:.4f}")

# -- 4. play the user: contest cells the heatmap gets wrong ------------------------
# the heatmap endpoint gives grid geometry plus quantized scores, so a
# client can translate cells back to image coordinates; a real user
# spots the errors by eye, here the ground-truth mask stands in
from scribbleloop.corpus import load_slide
from scribbleloop.tiling import build_grid, grid_labels
from scribbleloop.pipeline import DEFAULT_SPEC

image, tumor, tissue = load_slide(manifest, slide_id)
truth = grid_labels(build_grid(image.shape[:2], tissue, DEFAULT_SPEC), tumor)

heatmap = get(f"/sessions/{sid}/heatmap")
grid = heatmap["grid"]
stride = grid["patch_size"] * (1 - grid["overlap"])
half = grid["patch_size"] / 2
predicted = [q / 65535 > session["t_thresh"] for q in heatmap["scores_q16"]]


def longest_row_run(wanted):
    """Longest same-row run of consecutive columns among wanted cells."""
    best_row, best = None, []
    by_row = {}
    for (i, j), take in zip(heatmap["cells"], wanted):
        if take:
            by_row.setdefault(i, []).append(j)
    for i, cols in sorted(by_row.items()):
        run = [sorted(cols)[0]]
        for j in sorted(cols)[1:] + [None]:
            if j is not None and j == run[-1] + 1:
                run.append(j)
                continue
            if len(run) > len(best):
                best_row, best = i, list(run)
            run = [j]
    return best_row, best


staged_any = False
for kind, wanted, verb in (
    ("corrective_fp", [p and not t for p, t in zip(predicted, truth)], "healthy"),
    ("corrective_fn", [t and not p for p, t in zip(predicted, truth)], "tumor"),
):
    row, cols = longest_row_run(wanted)
    if row is None:
        print(f"no {kind} cells to mark, skipping")
        continue
    # stroke from inside the first cell to inside the last, so even a
    # single wrong cell yields two distinct points
    y = row * stride + half
    points = [[cols[0] * stride + 6, y], [cols[-1] * stride + grid["patch_size"] - 6, y]]
    staged = post(f"/sessions/{sid}/scribbles", {"kind": kind, "points": points})
    print(f"{kind} over row {row} marks {len(staged['patch_ids'])} patches as {verb}")
    staged_any = True

# -- 5. run the pass and read the history -----------------------------------------
if not staged_any:
    raise SystemExit("rough heatmap had nothing to contest, rerun on another slide")
result = post(f"/sessions/{sid}/passes", {})
print(f"pass {result['pass_index']}: n_epoch {result['n_epoch']}, "
      f"{result['elapsed_ms']:.0f} ms, "
      f"{len(result['hard_coded'])} pinned patches")

history = get(f"/sessions/{sid}/metrics")["history"]
for item in history:
    f1 = item["metrics"]["f1"]
    print(f"  pass {item['pass_index']}: F1 {f1:.3f}")

server.should_exit = True
thread.join(timeout=5)
print("\nserver stopped; the session snapshot persists under demo_output/data/sessions")

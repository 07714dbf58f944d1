"""
Scribble synthesis from a mask component
========================================

Walks the full synthesis chain on one blob-shaped component: contour
tracing, node subsampling, triangulation, the longest path through the
triangle adjacency, and the smoothed stroke. Saves an overlay image.
"""

from pathlib import Path

import numpy as np
from PIL import Image

from scribbleloop.imageops import connected_components, points_at_arc, trace_contour
from scribbleloop.scribbles import (
    ScribbleParams,
    longest_triangle_path,
    sample_contour_nodes,
    synth_scribble,
    triangulate_polygon,
)

out = Path("demo_output")
out.mkdir(exist_ok=True)

# -- 1. a lumpy test component ----------------------------------------------
# three overlapping discs make a mask with a non-convex outline
yy, xx = np.mgrid[0:96, 0:96]
mask = (
    ((yy - 40) ** 2 + (xx - 34) ** 2 < 22**2)
    | ((yy - 56) ** 2 + (xx - 58) ** 2 < 18**2)
    | ((yy - 30) ** 2 + (xx - 62) ** 2 < 12**2)
)
component = max(connected_components(mask), key=lambda c: c.area)
print(f"component: area {component.area} px, bbox {component.bbox}")

# -- 2. the geometric skeleton, stage by stage -------------------------------
contour = trace_contour(component)
print(f"contour: {len(contour.points)} boundary points, "
      f"{contour.arc_length:.1f} px around")

rng = np.random.default_rng(9)
nodes = sample_contour_nodes(contour, 15, rng)
print(f"nodes: {len(nodes)} polygon vertices")

tri = triangulate_polygon(nodes)
print(f"triangulation: {len(tri.triangles)} triangles")

path = longest_triangle_path(tri)
print(f"longest dual path: {len(path)} triangles end to end")

# -- 3. the finished stroke ---------------------------------------------------
# synth_scribble repeats the stages above with its own seeded randomness
# and smooths the triangle-center spine into a polyline
scribble = synth_scribble(component, ScribbleParams(seed=9))
print(f"scribble: {len(scribble.polyline.points)} points, "
      f"arc length {scribble.polyline.arc_length:.1f} px")

# two seeds never retrace the same stroke
other = synth_scribble(component, ScribbleParams(seed=10))
delta = np.abs(scribble.polyline.points.mean(0) - other.polyline.points.mean(0))
print(f"seed 9 vs seed 10 centroid shift: ({delta[0]:.2f}, {delta[1]:.2f}) px")

# -- 4. render mask, contour, and both strokes --------------------------------
canvas = np.zeros((96, 96, 3), dtype=np.uint8)
canvas[mask] = (70, 70, 70)
for x, y in contour.points:
    canvas[int(y), int(x)] = (160, 160, 160)
for stroke, color in ((scribble, (80, 220, 80)), (other, (240, 160, 40))):
    length = stroke.polyline.arc_length
    samples = points_at_arc(stroke.polyline.points, np.arange(0.0, length, 0.25))
    for x, y in samples:
        canvas[int(round(y)), int(round(x))] = color
Image.fromarray(canvas).resize((384, 384), Image.NEAREST).save(out / "scribble_overlay.png")
print(f"wrote {out / 'scribble_overlay.png'}")

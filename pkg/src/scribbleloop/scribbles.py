"""Scribble synthesis from mask components.

A scribble imitates a human drawing a continuous stroke along a region:
the region contour is resampled to a handful of nodes, the polygon they
form is triangulated (constrained Delaunay), the longest path through
the triangulation's dual tree becomes the stroke's spine, and one random
interior point per spine triangle is interpolated with a Catmull-Rom
spline. Small overflows outside the region are deliberately left in to
mimic human imprecision; nothing is clipped.

The same machinery produces corrective scribbles over misclassified
patch regions, with the arc length steered so that along-stroke patch
extraction yields a requested number of patches.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateInputError, GeometryError
from .imageops import Component, Polyline, connected_components, points_at_arc, trace_contour

CLASS_TUMOR = "tumor"
CLASS_NON_TUMOR = "non_tumor"
KIND_GROUND_TRUTH = "ground_truth"
KIND_CORRECTIVE_FP = "corrective_fp"
KIND_CORRECTIVE_FN = "corrective_fn"

# A corrective FP stroke asserts "this is NOT tumor"; FN asserts tumor.
_KIND_CLASS = {
    KIND_CORRECTIVE_FP: CLASS_NON_TUMOR,
    KIND_CORRECTIVE_FN: CLASS_TUMOR,
}


@dataclass(frozen=True)
class ScribbleParams:
    """Knobs for scribble synthesis; ``seed`` drives all randomness."""

    n_c: int = 15
    samples_per_hop: int = 8
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_c < 4:
            raise ValueError("n_c must be >= 4")
        if self.samples_per_hop < 2:
            raise ValueError("samples_per_hop must be >= 2")


@dataclass
class Scribble:
    polyline: Polyline
    class_label: str
    kind: str = KIND_GROUND_TRUTH
    seed: int = 0

    def __post_init__(self) -> None:
        if self.class_label not in (CLASS_TUMOR, CLASS_NON_TUMOR):
            raise ValueError(f"unknown class {self.class_label!r}")
        if self.kind not in (KIND_GROUND_TRUTH, KIND_CORRECTIVE_FP, KIND_CORRECTIVE_FN):
            raise ValueError(f"unknown kind {self.kind!r}")
        expected = _KIND_CLASS.get(self.kind)
        if expected is not None and self.class_label != expected:
            raise ValueError(f"kind {self.kind} requires class {expected}")
        if self.polyline.arc_length <= 0:
            raise ValueError("scribble arc length must be positive")

    @property
    def arc_length(self) -> float:
        return self.polyline.arc_length


@dataclass
class Triangulation:
    """Triangles over polygon vertices plus the dual adjacency.

    ``triangles`` holds CCW vertex-index triples; ``dual[t]`` lists the
    triangles sharing an edge with triangle ``t``. For a triangulation
    of a simple polygon without added interior points the dual graph is
    a tree with ``len(vertices) - 2`` nodes.
    """

    vertices: np.ndarray
    triangles: list[tuple[int, int, int]]
    dual: list[list[int]] = field(default_factory=list)


# ---------------------------------------------------------------------------
# contour node sampling
# ---------------------------------------------------------------------------


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _segments_cross(p1, p2, p3, p4, eps) -> bool:
    """True when the closed segments share any point."""
    d1 = _cross(p3, p4, p1)
    d2 = _cross(p3, p4, p2)
    d3 = _cross(p1, p2, p3)
    d4 = _cross(p1, p2, p4)
    if ((d1 > eps and d2 < -eps) or (d1 < -eps and d2 > eps)) and (
        (d3 > eps and d4 < -eps) or (d3 < -eps and d4 > eps)
    ):
        return True

    def on_segment(a, b, c):
        if abs(_cross(a, b, c)) > eps:
            return False
        return (
            min(a[0], b[0]) - eps <= c[0] <= max(a[0], b[0]) + eps
            and min(a[1], b[1]) - eps <= c[1] <= max(a[1], b[1]) + eps
        )

    return on_segment(p3, p4, p1) or on_segment(p3, p4, p2) or on_segment(p1, p2, p3) or on_segment(p1, p2, p4)


def polygon_is_simple(points: np.ndarray) -> bool:
    """Exhaustive pairwise segment check; fine for the node counts used here."""
    n = len(points)
    if n < 3:
        return False
    scale = max(points.max(axis=0) - points.min(axis=0))
    eps = max(scale, 1.0) * 1e-9
    area = 0.5 * abs(
        float(np.sum(points[:, 0] * np.roll(points[:, 1], -1) - np.roll(points[:, 0], -1) * points[:, 1]))
    )
    if area < max(scale, 1.0) ** 2 * 1e-6:
        return False
    segs = [(points[i], points[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue  # adjacent segments share an endpoint by design
            if _segments_cross(*segs[i], *segs[j], eps):
                return False
    return True


def sample_contour_nodes(
    contour: Polyline,
    n_c: int,
    rng: np.random.Generator,
    phase: float | None = None,
) -> np.ndarray:
    """``n_c`` points equally spaced by arc length along a closed contour.

    The starting phase is random unless given. If the simplified polygon
    self-intersects, the node count is lowered one step at a time (with
    a fresh phase) down to 4 before giving up.
    """
    if not contour.closed:
        raise ValueError("contour must be closed")
    total = contour.arc_length
    if total <= 0:
        raise DegenerateInputError("contour has zero arc length")

    for n in range(n_c, 3, -1):
        start = rng.uniform(0.0, total) if phase is None else float(phase)
        positions = (start + np.arange(n) * (total / n)) % total
        nodes = points_at_arc(contour.points, positions)
        if polygon_is_simple(nodes):
            return nodes
    raise GeometryError("could not simplify contour to a simple polygon")


# ---------------------------------------------------------------------------
# constrained Delaunay triangulation (ear clipping + edge flips)
# ---------------------------------------------------------------------------


def _point_in_triangle(p, a, b, c, eps) -> bool:
    d1, d2, d3 = _cross(a, b, p), _cross(b, c, p), _cross(c, a, p)
    return d1 >= -eps and d2 >= -eps and d3 >= -eps


def _ear_clip(points: np.ndarray, eps: float) -> list[list[int]]:
    n = len(points)
    ring = list(range(n))
    # Work in CCW orientation; emitted triangles keep original indices.
    area2 = float(
        np.sum(points[:, 0] * np.roll(points[:, 1], -1) - np.roll(points[:, 0], -1) * points[:, 1])
    )
    if area2 < 0:
        ring.reverse()

    triangles: list[list[int]] = []
    guard = 0
    while len(ring) > 3:
        guard += 1
        if guard > 4 * n * n:
            raise GeometryError("ear clipping did not terminate")
        clipped = False
        m = len(ring)
        for k in range(m):
            ia, ib, ic = ring[(k - 1) % m], ring[k], ring[(k + 1) % m]
            a, b, c = points[ia], points[ib], points[ic]
            if _cross(a, b, c) <= eps:
                continue  # reflex or collinear corner, not an ear
            blocked = False
            for other in ring:
                if other in (ia, ib, ic):
                    continue
                if _point_in_triangle(points[other], a, b, c, eps):
                    blocked = True
                    break
            if not blocked:
                triangles.append([ia, ib, ic])
                del ring[k]
                clipped = True
                break
        if not clipped:
            raise GeometryError("no ear found; polygon is degenerate or non-simple")
    ia, ib, ic = ring
    if _cross(points[ia], points[ib], points[ic]) < 0:
        ia, ic = ic, ia
    triangles.append([ia, ib, ic])
    return triangles


def _in_circumcircle(a, b, c, d, eps) -> bool:
    """True when d lies strictly inside the circumcircle of CCW (a, b, c)."""
    m = np.array(
        [
            [a[0] - d[0], a[1] - d[1], (a[0] - d[0]) ** 2 + (a[1] - d[1]) ** 2],
            [b[0] - d[0], b[1] - d[1], (b[0] - d[0]) ** 2 + (b[1] - d[1]) ** 2],
            [c[0] - d[0], c[1] - d[1], (c[0] - d[0]) ** 2 + (c[1] - d[1]) ** 2],
        ]
    )
    return float(np.linalg.det(m)) > eps


def _proper_cross(p1, p2, p3, p4, eps) -> bool:
    """True only when the open segments intersect at a single interior point."""
    d1 = _cross(p3, p4, p1)
    d2 = _cross(p3, p4, p2)
    d3 = _cross(p1, p2, p3)
    d4 = _cross(p1, p2, p4)
    return ((d1 > eps and d2 < -eps) or (d1 < -eps and d2 > eps)) and (
        (d3 > eps and d4 < -eps) or (d3 < -eps and d4 > eps)
    )


def _delaunay_flips(points: np.ndarray, triangles: list[list[int]], eps: float) -> list[list[int]]:
    n = len(points)
    boundary = {frozenset((i, (i + 1) % n)) for i in range(n)}
    scale = float(max(points.max(axis=0) - points.min(axis=0)))
    # Ties (near-cocircular quads) must not trigger flips or the loop thrashes.
    det_eps = max(scale, 1.0) ** 4 * 1e-9

    def edge_map(tris):
        edges: dict[frozenset, list[int]] = {}
        for t, (a, b, c) in enumerate(tris):
            for e in (frozenset((a, b)), frozenset((b, c)), frozenset((c, a))):
                edges.setdefault(e, []).append(t)
        return edges

    for _ in range(4 * len(triangles) * len(triangles) + 16):
        edges = edge_map(triangles)
        flipped = False
        for e, ts in edges.items():
            if len(ts) != 2 or e in boundary:
                continue
            t1, t2 = ts
            u, v = tuple(e)
            a = next(i for i in triangles[t1] if i not in e)
            b = next(i for i in triangles[t2] if i not in e)
            pa, pb, pu, pv = points[a], points[b], points[u], points[v]
            # The flip is only legal when the new diagonal a-b crosses u-v.
            if not _proper_cross(pa, pb, pu, pv, eps):
                continue
            ta = [x for x in triangles[t1]]
            if _cross(points[ta[0]], points[ta[1]], points[ta[2]]) < 0:
                ta.reverse()
            # Use T1's CCW order to orient the incircle test.
            i_a = ta.index(a)
            ccw = [ta[i_a], ta[(i_a + 1) % 3], ta[(i_a + 2) % 3]]
            if _in_circumcircle(points[ccw[0]], points[ccw[1]], points[ccw[2]], pb, det_eps):
                for t_new, tri in ((t1, [a, u, b]), (t2, [a, b, v])):
                    if _cross(points[tri[0]], points[tri[1]], points[tri[2]]) < 0:
                        tri.reverse()
                    triangles[t_new] = tri
                flipped = True
                break
        if not flipped:
            break
    return triangles


def triangulate_polygon(nodes: np.ndarray) -> Triangulation:
    """Constrained Delaunay triangulation of a simple polygon's interior.

    Built by ear clipping followed by Delaunay edge flips on interior
    edges; polygon edges are the constraints and never flip. The dual
    adjacency is computed over shared interior edges and is always a
    tree here (no interior points are ever added).
    """
    nodes = np.asarray(nodes, dtype=float)
    if not polygon_is_simple(nodes):
        raise GeometryError("polygon is not simple")
    scale = float(max(nodes.max(axis=0) - nodes.min(axis=0)))
    eps = max(scale, 1.0) ** 2 * 1e-12

    triangles = _ear_clip(nodes, eps)
    triangles = _delaunay_flips(nodes, triangles, eps)

    tri_tuples = [tuple(int(i) for i in t) for t in triangles]
    dual: list[list[int]] = [[] for _ in tri_tuples]
    edges: dict[frozenset, list[int]] = {}
    for t, (a, b, c) in enumerate(tri_tuples):
        for e in (frozenset((a, b)), frozenset((b, c)), frozenset((c, a))):
            edges.setdefault(e, []).append(t)
    n_dual_edges = 0
    for ts in edges.values():
        if len(ts) == 2:
            dual[ts[0]].append(ts[1])
            dual[ts[1]].append(ts[0])
            n_dual_edges += 1
    for neighbors in dual:
        neighbors.sort()
    if n_dual_edges != len(tri_tuples) - 1:
        raise GeometryError("triangulation dual is not a tree")
    return Triangulation(vertices=nodes, triangles=tri_tuples, dual=dual)


# ---------------------------------------------------------------------------
# longest path through the dual
# ---------------------------------------------------------------------------


def _bfs_farthest(adj: list[list[int]], start: int) -> tuple[int, dict[int, int]]:
    """Farthest node from ``start`` (smallest index on ties) and parents."""
    parent = {start: -1}
    dist = {start: 0}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        for nb in adj[node]:
            if nb not in dist:
                dist[nb] = dist[node] + 1
                parent[nb] = node
                queue.append(nb)
    far = max(dist.values())
    target = min(n for n, d in dist.items() if d == far)
    return target, parent


def longest_triangle_path(tri: Triangulation) -> list[int]:
    """Diameter path of the dual tree via double BFS.

    Exact for trees, which polygon-triangulation duals always are. The
    returned path starts at its smaller endpoint index.
    """
    if not tri.triangles:
        raise DegenerateInputError("empty triangulation")
    if len(tri.triangles) == 1:
        return [0]
    u, _ = _bfs_farthest(tri.dual, 0)
    v, parent = _bfs_farthest(tri.dual, u)
    path = [v]
    while parent[path[-1]] != -1:
        path.append(parent[path[-1]])
    if path[0] > path[-1]:
        path.reverse()
    return path


# ---------------------------------------------------------------------------
# spline interpolation
# ---------------------------------------------------------------------------


def catmull_rom(control: np.ndarray, samples_per_hop: int) -> np.ndarray:
    """Uniform Catmull-Rom spline through all control points.

    Endpoints are duplicated so the curve starts and ends exactly at the
    first and last control points.
    """
    control = np.asarray(control, dtype=float)
    if len(control) < 2:
        raise ValueError("need at least two control points")
    pts = np.vstack([control[:1], control, control[-1:]])
    out = []
    t = np.arange(samples_per_hop) / samples_per_hop
    t2, t3 = t * t, t * t * t
    for i in range(len(control) - 1):
        p0, p1, p2, p3 = pts[i], pts[i + 1], pts[i + 2], pts[i + 3]
        coef = (
            2 * p1[None, :]
            + (p2 - p0)[None, :] * t[:, None]
            + (2 * p0 - 5 * p1 + 4 * p2 - p3)[None, :] * t2[:, None]
            + (3 * p1 - 3 * p2 + p3 - p0)[None, :] * t3[:, None]
        )
        out.append(0.5 * coef)
    out.append(control[-1:])
    return np.vstack(out)


def _uniform_triangle_point(a, b, c, rng: np.random.Generator) -> np.ndarray:
    # Square-root transform keeps the density uniform over the area.
    r1, r2 = rng.random(), rng.random()
    s = math.sqrt(r1)
    return (1 - s) * a + s * (1 - r2) * b + s * r2 * c


# ---------------------------------------------------------------------------
# scribble synthesis
# ---------------------------------------------------------------------------


def _spine_points(tri: Triangulation, path: list[int], rng: np.random.Generator) -> np.ndarray:
    pts = []
    for t in path:
        a, b, c = (tri.vertices[i] for i in tri.triangles[t])
        pts.append(_uniform_triangle_point(a, b, c, rng))
    if len(pts) == 1:
        a, b, c = (tri.vertices[i] for i in tri.triangles[path[0]])
        pts.append(_uniform_triangle_point(a, b, c, rng))
    return np.array(pts)


def synth_scribble(
    component: Component,
    params: ScribbleParams,
    class_label: str = CLASS_TUMOR,
    kind: str = KIND_GROUND_TRUTH,
) -> Scribble:
    """One random scribble inside a mask component.

    Deterministic per ``params.seed``; different seeds give different
    strokes over the same component.
    """
    rng = np.random.default_rng(params.seed)
    contour = trace_contour(component)
    nodes = sample_contour_nodes(contour, params.n_c, rng)
    tri = triangulate_polygon(nodes)
    path = longest_triangle_path(tri)
    spine = _spine_points(tri, path, rng)
    curve = catmull_rom(spine, params.samples_per_hop)
    return Scribble(
        polyline=Polyline(curve, closed=False),
        class_label=class_label,
        kind=kind,
        seed=params.seed,
    )


def select_tumor_components(components: list[Component]) -> list[Component]:
    """Top ceil(10%) of components by area, at least 1 and at most 10."""
    if not components:
        raise DegenerateInputError("no components to select from")
    ordered = sorted(components, key=lambda c: (-c.area, c.label))
    n = min(10, max(1, math.ceil(0.10 * len(ordered))))
    return ordered[:n]


# ---------------------------------------------------------------------------
# corrective scribbles over misclassified patch regions
# ---------------------------------------------------------------------------


def _cell_chain(component: Component) -> np.ndarray:
    """Fallback spine for regions too small or thin to triangulate.

    Walks the diameter (double BFS) of the 8-connected cell graph and
    returns the visited cell coordinates as (x, y) rows.
    """
    ys, xs = np.nonzero(component.submask)
    y0, x0, _, _ = component.bbox
    cells = [(int(x) + x0, int(y) + y0) for y, x in zip(ys, xs)]
    if len(cells) == 1:
        return np.array([cells[0]], dtype=float)
    index = {c: i for i, c in enumerate(cells)}
    adj: list[list[int]] = [[] for _ in cells]
    for (cx, cy), i in index.items():
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                if dx == dy == 0:
                    continue
                j = index.get((cx + dx, cy + dy))
                if j is not None:
                    adj[i].append(j)
    for a in adj:
        a.sort()
    u, _ = _bfs_farthest(adj, 0)
    v, parent = _bfs_farthest(adj, u)
    path = [v]
    while parent[path[-1]] != -1:
        path.append(parent[path[-1]])
    return np.array([cells[i] for i in path], dtype=float)


def _region_contains(point: np.ndarray, cell_set: set, stride: float, patch: float) -> bool:
    """Is the pixel point inside the union of the region's patch rectangles?"""
    px, py = float(point[0]), float(point[1])
    jmin = math.ceil((px - patch) / stride)
    jmax = math.floor(px / stride)
    imin = math.ceil((py - patch) / stride)
    imax = math.floor(py / stride)
    for i in range(imin, imax + 1):
        for j in range(jmin, jmax + 1):
            if (j, i) in cell_set:
                return True
    return False


def _trim_polyline(points: np.ndarray, length: float) -> np.ndarray:
    seg = np.hypot(*np.diff(points, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    if cum[-1] <= length:
        return points
    k = int(np.searchsorted(cum, length, side="right") - 1)
    end = points_at_arc(points, np.array([length]))[0]
    return np.vstack([points[: k + 1], end])


def _subcurve(points: np.ndarray, start: float, end: float) -> np.ndarray:
    """The polyline restricted to arc positions [start, end]."""
    pts = _trim_polyline(points, end)
    if start <= 1e-9:
        return pts
    seg = np.hypot(*np.diff(pts, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    head = points_at_arc(pts, np.array([start]))[0]
    return np.vstack([head[None, :], pts[cum > start + 1e-9]])


def _best_window_offset(curve: np.ndarray, grid, target: int) -> float:
    """Arc offset whose target-length window hits the most distinct cells.

    A long spine can fold back on itself; sliding the kept window along
    the stroke finds a stretch where stride-spaced samples all land on
    fresh cells. Ties prefer the earliest offset.
    """
    stride = grid.spec.stride
    length = float(np.hypot(*np.diff(curve, axis=0).T).sum())
    budget = target * stride
    offsets = np.arange(0.0, length - budget + 1e-9, stride / 4.0)
    best_off, best_d = 0.0, -1
    for off in offsets:
        centers = points_at_arc(curve, off + np.arange(target) * stride)
        cells = {grid.snap(cy, cx) for cx, cy in centers}
        cells.discard(None)
        if len(cells) > best_d:
            best_off, best_d = float(off), len(cells)
            if best_d == target:
                break
    return best_off


def _enforce_count_law(curve: np.ndarray, grid, target: int) -> np.ndarray:
    """Trim the curve where stride-spaced samples stop finding new cells.

    Along-stroke extraction dedupes on grid cells, so a stroke that
    folds back on itself yields fewer patches than its length promises.
    Simulating the extraction and cutting after the longest prefix with
    at most one duplicate keeps the extracted count within one of
    floor(l / stride) + 1.
    """
    stride = grid.spec.stride
    seg = np.hypot(*np.diff(curve, axis=0).T)
    length = float(seg.sum())
    count = max(1, int(math.ceil(length / stride - 1e-9)))
    if count <= 1:
        return curve
    centers = points_at_arc(curve, np.arange(count) * stride)
    seen: set[int] = set()
    fresh = 0
    best = 1
    for n, (cx, cy) in enumerate(centers, start=1):
        pid = grid.snap(cy, cx)
        if pid is not None and pid not in seen:
            seen.add(pid)
            fresh += 1
        if fresh >= n - 1:
            best = n
    if best < count:
        curve = _trim_polyline(curve, (best - 0.45) * stride)
    return curve


def corrective_scribble(
    error_region: Component,
    grid,
    target: int,
    params: ScribbleParams,
    kind: str,
) -> Scribble:
    """Scribble over one misclassified patch region.

    ``error_region`` is a component of the misclassification mask in
    patch-index space. The stroke follows the triangle-path spine when
    the region is fat enough; thin or tiny regions fall back to a chain
    through the cell centers, and a single cell degenerates to a dot.
    The arc length is trimmed, or extended inside the region, so that
    along-stroke extraction yields min(target, region size) patches.
    """
    if kind not in _KIND_CLASS:
        raise ValueError("corrective scribbles must be corrective_fp or corrective_fn")
    spec = grid.spec
    stride = spec.stride
    rng = np.random.default_rng(params.seed)

    def to_pixels(cell_xy: np.ndarray) -> np.ndarray:
        return cell_xy * stride + spec.patch_size / 2.0

    spine_cells = None
    if error_region.area >= 4:
        try:
            contour = trace_contour(error_region)
            nodes = sample_contour_nodes(contour, params.n_c, rng)
            tri = triangulate_polygon(nodes)
            path = longest_triangle_path(tri)
            spine_cells = _spine_points(tri, path, rng)
        except (DegenerateInputError, GeometryError):
            spine_cells = None
    if spine_cells is None:
        spine_cells = _cell_chain(error_region)

    if len(spine_cells) == 1:  # dot annotation on a single patch
        center = to_pixels(spine_cells[0])
        curve = np.vstack([center, center + (stride * 0.05 + 0.5, 0.0)])
    else:
        # Respace the spine so control points sit one stride apart; the
        # spline then advances roughly one grid cell per stride of arc,
        # which keeps stride-spaced extraction from revisiting cells.
        spine_px = to_pixels(spine_cells)
        spine_len = float(np.hypot(*np.diff(spine_px, axis=0).T).sum())
        n_ctrl = max(2, int(math.floor(spine_len / stride)) + 1)
        controls = points_at_arc(spine_px, np.arange(n_ctrl) * stride)
        if spine_len - (n_ctrl - 1) * stride > 0.25 * stride:
            controls = np.vstack([controls, spine_px[-1]])
        curve = catmull_rom(controls, params.samples_per_hop)

    m_goal = min(target, error_region.area)
    needed = (m_goal - 0.55) * stride
    seg = np.hypot(*np.diff(curve, axis=0).T)
    length = float(seg.sum())
    if length > target * stride:
        off = _best_window_offset(curve, grid, target)
        curve = _subcurve(curve, off, off + target * stride)
    elif length < needed and len(curve) >= 2:
        ys, xs = np.nonzero(error_region.submask)
        y0, x0, _, _ = error_region.bbox
        cell_set = {(int(x) + x0, int(y) + y0) for y, x in zip(ys, xs)}
        direction = curve[-1] - curve[-2]
        norm = float(np.hypot(*direction))
        if norm > 0:
            direction = direction / norm
            step = stride / 8.0
            end = curve[-1].copy()
            while length < needed:
                candidate = end + direction * step
                if not _region_contains(candidate, cell_set, stride, spec.patch_size):
                    break
                end = candidate
                length += step
            if not np.allclose(end, curve[-1]):
                curve = np.vstack([curve, end])

    curve = _enforce_count_law(curve, grid, target)

    return Scribble(
        polyline=Polyline(curve, closed=False),
        class_label=_KIND_CLASS[kind],
        kind=kind,
        seed=params.seed,
    )


# ---------------------------------------------------------------------------
# serialization: one JSON object per scribble, one JSON-lines file per slide
# ---------------------------------------------------------------------------


def write_scribbles(path: str | Path, scribbles: list[Scribble]) -> None:
    with open(path, "w") as fh:
        for s in scribbles:
            rec = {
                "class": s.class_label,
                "kind": s.kind,
                "seed": int(s.seed),
                "points": [[float(x), float(y)] for x, y in s.polyline.points],
            }
            fh.write(json.dumps(rec) + "\n")


def read_scribbles(path: str | Path) -> list[Scribble]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            out.append(
                Scribble(
                    polyline=Polyline(np.array(rec["points"], dtype=float), closed=False),
                    class_label=rec["class"],
                    kind=rec["kind"],
                    seed=int(rec["seed"]),
                )
            )
    return out


def misclassified_components(predicted: np.ndarray, truth: np.ndarray) -> tuple[list[Component], list[Component]]:
    """FP and FN components of a predicted-vs-truth label grid.

    Both inputs are boolean arrays in patch-index space; cells outside
    the grid should already be False in both.
    """
    fp = connected_components(predicted & ~truth)
    fn = connected_components(~predicted & truth)
    return fp, fn

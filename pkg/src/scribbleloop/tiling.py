"""Overlapping patch grids and along-scribble patch extraction.

Patches of side ``patch_size`` are laid out row-major at stride
``patch_size * (1 - overlap)``; only patches with enough tissue are
kept. Scribbles are converted to patches by sampling their arc at
stride-spaced positions on the half-open interval [0, l), so a scribble
of length exactly k strides yields exactly k patches.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DegenerateInputError
from .imageops import points_at_arc
from .scribbles import CLASS_TUMOR, Scribble

DEFAULT_TISSUE_FRACTION = 0.25
DEFAULT_TUMOR_FRACTION = 0.5


@dataclass(frozen=True)
class PatchSpec:
    """Patch geometry: side length, overlap fraction, magnification tag."""

    patch_size: int = 32
    overlap: float = 0.5
    mag: str = ""

    def __post_init__(self) -> None:
        if self.patch_size < 8:
            raise ValueError("patch_size must be >= 8")
        if not 0.0 <= self.overlap < 1.0:
            raise ValueError("overlap must be in [0, 1)")
        if self.stride < 1.0:
            raise ValueError("stride must be >= 1 pixel")

    @property
    def stride(self) -> float:
        return self.patch_size * (1.0 - self.overlap)


@dataclass
class Patch:
    id: int
    i: int
    j: int
    x: int
    y: int
    tissue_frac: float = 1.0
    label: int | None = None


@dataclass
class PatchGrid:
    """Retained tissue patches plus the (i, j) -> patch id index."""

    slide_id: str
    spec: PatchSpec
    shape: tuple[int, int]
    n_rows: int
    n_cols: int
    patches: list[Patch]
    index: dict[tuple[int, int], int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.patches)

    def patch_at(self, i: int, j: int) -> Patch | None:
        pid = self.index.get((i, j))
        return None if pid is None else self.patches[pid]

    def occupancy(self) -> np.ndarray:
        """Boolean (n_rows, n_cols) array marking retained cells."""
        occ = np.zeros((self.n_rows, self.n_cols), dtype=bool)
        for p in self.patches:
            occ[p.i, p.j] = True
        return occ

    def cell_array(self, values: np.ndarray, fill: float = np.nan) -> np.ndarray:
        """Spread per-patch values onto the (n_rows, n_cols) cell lattice."""
        values = np.asarray(values)
        if len(values) != len(self.patches):
            raise ValueError("one value per patch required")
        out = np.full((self.n_rows, self.n_cols), fill, dtype=float)
        for p in self.patches:
            out[p.i, p.j] = values[p.id]
        return out

    def gather_cells(self, cells: np.ndarray, fill: float = 0.0) -> np.ndarray:
        """Inverse of cell_array: per-patch values from a cell lattice."""
        return np.array([cells[p.i, p.j] if not np.isnan(cells[p.i, p.j]) else fill for p in self.patches])

    def snap(self, cy: float, cx: float) -> int | None:
        """Nearest retained cell for a pixel-space patch center, or None."""
        stride = self.spec.stride
        half = self.spec.patch_size / 2.0
        i = int(round((cy - half) / stride))
        j = int(round((cx - half) / stride))
        i = min(max(i, 0), self.n_rows - 1)
        j = min(max(j, 0), self.n_cols - 1)
        pid = self.index.get((i, j))
        if pid is not None:
            return pid
        best = None
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                cand = self.index.get((i + di, j + dj))
                if cand is None:
                    continue
                p = self.patches[cand]
                d = (p.y + half - cy) ** 2 + (p.x + half - cx) ** 2
                if best is None or d < best[0] or (d == best[0] and cand < best[1]):
                    best = (d, cand)
        return None if best is None else best[1]


def _integral(mask: np.ndarray) -> np.ndarray:
    ii = np.zeros((mask.shape[0] + 1, mask.shape[1] + 1), dtype=np.int64)
    ii[1:, 1:] = np.cumsum(np.cumsum(mask.astype(np.int64), axis=0), axis=1)
    return ii


def _window_sums(ii: np.ndarray, ys: np.ndarray, xs: np.ndarray, size: int) -> np.ndarray:
    return (
        ii[np.ix_(ys + size, xs + size)]
        - ii[np.ix_(ys, xs + size)]
        - ii[np.ix_(ys + size, xs)]
        + ii[np.ix_(ys, xs)]
    )


def grid_positions(extent: int, spec: PatchSpec) -> np.ndarray:
    """Top-left coordinates of all patches fully inside ``extent`` pixels."""
    if extent < spec.patch_size:
        raise DegenerateInputError("slide smaller than one patch")
    n = int(math.floor((extent - spec.patch_size) / spec.stride)) + 1
    return np.rint(np.arange(n) * spec.stride).astype(int)


def build_grid(
    shape: tuple[int, int],
    tissue: np.ndarray,
    spec: PatchSpec,
    slide_id: str = "",
    tissue_fraction: float = DEFAULT_TISSUE_FRACTION,
) -> PatchGrid:
    """Row-major grid over the slide keeping patches on tissue.

    A patch is retained when at least ``tissue_fraction`` of its pixels
    are tissue. Ids are dense 0..N-1 in row-major order.
    """
    if tissue.shape != tuple(shape):
        raise ValueError("tissue mask dims must equal slide dims")
    if not tissue.any():
        raise DegenerateInputError("tissue mask is empty")
    ys = grid_positions(shape[0], spec)
    xs = grid_positions(shape[1], spec)
    fracs = _window_sums(_integral(tissue), ys, xs, spec.patch_size) / float(spec.patch_size**2)

    patches: list[Patch] = []
    index: dict[tuple[int, int], int] = {}
    for i, y in enumerate(ys):
        for j, x in enumerate(xs):
            if fracs[i, j] >= tissue_fraction:
                pid = len(patches)
                patches.append(Patch(id=pid, i=i, j=j, x=int(x), y=int(y), tissue_frac=float(fracs[i, j])))
                index[(i, j)] = pid
    return PatchGrid(
        slide_id=slide_id,
        spec=spec,
        shape=(int(shape[0]), int(shape[1])),
        n_rows=len(ys),
        n_cols=len(xs),
        patches=patches,
        index=index,
    )


def patches_along_scribble(
    scribble: Scribble,
    spec: PatchSpec,
    slide_shape: tuple[int, int] | None = None,
    grid: PatchGrid | None = None,
) -> list[Patch]:
    """Patches centered at stride-spaced arc positions of the scribble.

    Sampling is on the half-open arc [0, l): positions 0, s, 2s, ...
    strictly below l, so count = ceil(l / s) and a length of exactly
    k strides yields exactly k patches. With a grid, each sample snaps
    to the nearest retained cell and duplicates are dropped keeping the
    first occurrence; without one, raw pixel patches are returned
    (clamped into the slide when its shape is known).
    """
    s = spec.stride
    l = scribble.arc_length
    if l <= 0:
        raise DegenerateInputError("scribble arc length must be positive")
    count = max(1, int(math.ceil(l / s - 1e-9)))
    centers = points_at_arc(scribble.polyline.points, np.arange(count) * s)
    label = 1 if scribble.class_label == CLASS_TUMOR else 0

    out: list[Patch] = []
    if grid is not None:
        seen: set[int] = set()
        for cx, cy in centers:
            pid = grid.snap(cy, cx)
            if pid is None or pid in seen:
                continue
            seen.add(pid)
            out.append(replace(grid.patches[pid], label=label))
        return out

    half = spec.patch_size / 2.0
    for k, (cx, cy) in enumerate(centers):
        x = int(round(cx - half))
        y = int(round(cy - half))
        if slide_shape is not None:
            y = min(max(y, 0), slide_shape[0] - spec.patch_size)
            x = min(max(x, 0), slide_shape[1] - spec.patch_size)
        i = int(round(y / s))
        j = int(round(x / s))
        out.append(Patch(id=k, i=i, j=j, x=x, y=y, label=label))
    return out


def label_patch(
    patch: Patch,
    gt: np.ndarray,
    rule: str = "fraction",
    threshold: float = DEFAULT_TUMOR_FRACTION,
    patch_size: int | None = None,
) -> int:
    """Evaluation label for one patch against a ground-truth mask.

    ``fraction``: label 1 when the tumor fraction is >= threshold
    (inclusive). ``center``: label of the patch's center pixel.
    """
    if patch_size is None:
        raise ValueError("patch_size is required")
    size = patch_size
    window = gt[patch.y : patch.y + size, patch.x : patch.x + size]
    if rule == "fraction":
        return int(window.mean() >= threshold)
    if rule == "center":
        return int(window[size // 2, size // 2])
    raise ValueError(f"unknown labeling rule {rule!r}")


def grid_labels(
    grid: PatchGrid,
    gt: np.ndarray,
    rule: str = "fraction",
    threshold: float = DEFAULT_TUMOR_FRACTION,
) -> np.ndarray:
    """Vectorized evaluation labels for every patch in the grid."""
    if gt.shape != grid.shape:
        raise ValueError("ground-truth dims must equal slide dims")
    size = grid.spec.patch_size
    if rule == "center":
        return np.array([int(gt[p.y + size // 2, p.x + size // 2]) for p in grid.patches])
    if rule != "fraction":
        raise ValueError(f"unknown labeling rule {rule!r}")
    ii = _integral(gt)
    ys = np.array([p.y for p in grid.patches])
    xs = np.array([p.x for p in grid.patches])
    sums = (
        ii[ys + size, xs + size] - ii[ys, xs + size] - ii[ys + size, xs] + ii[ys, xs]
    )
    return (sums / float(size**2) >= threshold).astype(int)


# ---------------------------------------------------------------------------
# serialization: JSON header line + one JSON line per patch
# ---------------------------------------------------------------------------


def write_grid(path: str | Path, grid: PatchGrid) -> None:
    header = {
        "version": 1,
        "slide_id": grid.slide_id,
        "patch_size": grid.spec.patch_size,
        "overlap": grid.spec.overlap,
        "mag": grid.spec.mag,
        "shape": list(grid.shape),
        "n_rows": grid.n_rows,
        "n_cols": grid.n_cols,
        "count": len(grid.patches),
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for p in grid.patches:
            rec = {"id": p.id, "i": p.i, "j": p.j, "x": p.x, "y": p.y, "tissue_frac": p.tissue_frac}
            if p.label is not None:
                rec["label"] = p.label
            fh.write(json.dumps(rec) + "\n")


def read_grid(path: str | Path) -> PatchGrid:
    with open(path) as fh:
        header = json.loads(fh.readline())
        spec = PatchSpec(patch_size=header["patch_size"], overlap=header["overlap"], mag=header["mag"])
        patches = []
        index = {}
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            p = Patch(
                id=int(rec["id"]),
                i=int(rec["i"]),
                j=int(rec["j"]),
                x=int(rec["x"]),
                y=int(rec["y"]),
                tissue_frac=float(rec.get("tissue_frac", 1.0)),
                label=rec.get("label"),
            )
            patches.append(p)
            index[(p.i, p.j)] = p.id
    return PatchGrid(
        slide_id=header["slide_id"],
        spec=spec,
        shape=tuple(header["shape"]),
        n_rows=int(header["n_rows"]),
        n_cols=int(header["n_cols"]),
        patches=patches,
        index=index,
    )

"""Raster utilities: thresholding, morphology, components, contours.

Conventions used throughout the package:

* rasters are uint8 numpy arrays, ``(H, W)`` gray or ``(H, W, 3)`` RGB,
  indexed ``[y, x]``;
* binary masks are boolean arrays of the same ``(H, W)`` shape;
* polyline points are float ``(x, y)`` pairs in pixel coordinates;
* connectivity is 8-connected everywhere.

Otsu thresholding splits gray levels into ``{g < t}`` (dark class) and
``{g >= t}``; ties in between-class variance are broken toward the
smallest level. Tissue is assumed to be the dark class on a bright
background unless ``invert`` is set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DegenerateInputError

# 8-connectivity structuring element for component labelling.
_CONN8 = np.ones((3, 3), dtype=bool)

# Fixed luma weights so masks are bit-reproducible across runs.
_LUMA = np.array([0.299, 0.587, 0.114])

DEFAULT_CLOSE_RADIUS = 4


@dataclass(frozen=True)
class Component:
    """One 8-connected blob of set pixels.

    ``bbox`` is ``(y0, x0, y1, x1)`` with exclusive upper bounds and
    ``submask`` is the component's pixels within that box.
    """

    label: int
    area: int
    bbox: tuple[int, int, int, int]
    submask: np.ndarray

    def full_mask(self, shape: tuple[int, int]) -> np.ndarray:
        """Paint the component into a full-frame boolean mask."""
        out = np.zeros(shape, dtype=bool)
        y0, x0, y1, x1 = self.bbox
        out[y0:y1, x0:x1] = self.submask
        return out


@dataclass
class Polyline:
    """Ordered polyline; ``points`` is an ``(N, 2)`` float array of (x, y)."""

    points: np.ndarray
    closed: bool = False

    def __post_init__(self) -> None:
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2 or self.points.shape[1] != 2 or len(self.points) < 2:
            raise ValueError("polyline needs an (N, 2) array with N >= 2")

    @property
    def arc_length(self) -> float:
        return float(np.sum(np.hypot(*np.diff(self.points, axis=0).T)))

    def point_at(self, s: float) -> np.ndarray:
        """Point at arc-length position ``s``, clamped to [0, arc_length]."""
        return points_at_arc(self.points, np.array([s]))[0]


def points_at_arc(points: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """Interpolate polyline points at the given arc-length positions."""
    seg = np.hypot(*np.diff(points, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total <= 0:
        raise DegenerateInputError("polyline has zero arc length")
    s = np.clip(positions, 0.0, total)
    idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
    denom = np.where(seg[idx] > 0, seg[idx], 1.0)
    t = (s - cum[idx]) / denom
    return points[idx] + t[:, None] * (points[idx + 1] - points[idx])


def to_gray(slide: np.ndarray) -> np.ndarray:
    """RGB -> uint8 gray with fixed luma weights (bit-reproducible)."""
    if slide.ndim == 2:
        return slide.astype(np.uint8)
    if slide.ndim != 3 or slide.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) raster, got shape {slide.shape}")
    gray = slide.astype(np.float64) @ _LUMA
    return np.rint(gray).clip(0, 255).astype(np.uint8)


def gray_histogram(gray: np.ndarray) -> np.ndarray:
    """256-bin gray-level histogram."""
    return np.bincount(gray.ravel(), minlength=256)[:256]


def otsu_threshold(histogram: np.ndarray) -> int:
    """Between-class-variance-maximizing threshold over a 256-bin histogram.

    Classes are ``{g < t}`` and ``{g >= t}``. Returns the smallest
    maximizing ``t``; a histogram with a single occupied level returns
    that level (every split has zero variance there).
    """
    hist = np.asarray(histogram, dtype=np.float64)
    if hist.shape != (256,):
        raise ValueError("histogram must have exactly 256 bins")
    total = hist.sum()
    if total <= 0:
        raise DegenerateInputError("all-zero histogram")
    occupied = np.nonzero(hist)[0]
    if len(occupied) == 1:
        return int(occupied[0])

    levels = np.arange(256, dtype=np.float64)
    # Cumulative mass/mean of the dark class {g < t} for t = 0..255.
    w0 = np.concatenate([[0.0], np.cumsum(hist)[:-1]]) / total
    m0 = np.concatenate([[0.0], np.cumsum(hist * levels)[:-1]]) / total
    mu = (hist * levels).sum() / total
    w1 = 1.0 - w0
    with np.errstate(divide="ignore", invalid="ignore"):
        mu0 = np.where(w0 > 0, m0 / w0, 0.0)
        mu1 = np.where(w1 > 0, (mu - m0) / w1, 0.0)
    variance = w0 * w1 * (mu0 - mu1) ** 2
    return int(np.argmax(variance))  # argmax takes the first (smallest) maximizer


def _disc(radius: int) -> np.ndarray:
    r = int(radius)
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    return (yy * yy + xx * xx) <= r * r


def morph_close(mask: np.ndarray, radius: int) -> np.ndarray:
    """Morphological closing with a disc element.

    The mask is padded by ``radius`` before dilation/erosion so the
    result equals the unbounded-plane closing restricted to the frame;
    this keeps closing extensive (output contains input) and idempotent
    even for shapes touching the border.
    """
    if radius < 1:
        raise ValueError("radius must be >= 1")
    mask = np.asarray(mask, dtype=bool)
    disc = _disc(radius)
    padded = np.pad(mask, radius, mode="constant", constant_values=False)
    closed = ndimage.binary_erosion(ndimage.binary_dilation(padded, disc), disc)
    return closed[radius:-radius, radius:-radius]


def connected_components(mask: np.ndarray) -> list[Component]:
    """8-connected components, sorted by area descending.

    Ties are broken by label id, i.e. row-major first-encounter order.
    """
    mask = np.asarray(mask, dtype=bool)
    labels, n = ndimage.label(mask, structure=_CONN8)
    if n == 0:
        return []
    slices = ndimage.find_objects(labels)
    comps = []
    for lab, sl in enumerate(slices, start=1):
        sub = labels[sl] == lab
        y0, x0 = sl[0].start, sl[1].start
        comps.append(
            Component(
                label=lab,
                area=int(sub.sum()),
                bbox=(y0, x0, sl[0].stop, sl[1].stop),
                submask=sub,
            )
        )
    comps.sort(key=lambda c: (-c.area, c.label))
    return comps


# Clockwise Moore neighborhood offsets as (dy, dx), starting east.
_MOORE = [(0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1)]


def _has_solid_block(mask: np.ndarray) -> bool:
    if mask.shape[0] < 2 or mask.shape[1] < 2:
        return False
    return bool(np.any(mask[:-1, :-1] & mask[1:, :-1] & mask[:-1, 1:] & mask[1:, 1:]))


def trace_contour(component: Component) -> Polyline:
    """Closed boundary polyline of a component via Moore tracing.

    Components with no interior (area < 4, or no 2x2 solid block after
    the thinness check) cannot form a non-degenerate closed contour and
    raise :class:`DegenerateInputError`.
    """
    if component.area < 4:
        raise DegenerateInputError(f"component area {component.area} < 4")
    if not _has_solid_block(component.submask):
        raise DegenerateInputError("component is everywhere one pixel thin")

    y0, x0, _, _ = component.bbox
    # One-pixel pad so neighbor lookups never leave the array.
    m = np.pad(component.submask, 1, mode="constant", constant_values=False)

    ys, xs = np.nonzero(m)
    start = (int(ys[0]), int(xs[0]))  # topmost, then leftmost set pixel
    start_back = 4  # entered from the west, which is background at the start

    contour = [start]
    cur, back = start, start_back
    seen = {(start, start_back): 0}
    max_steps = 8 * component.area + 8
    for _ in range(max_steps):
        found = False
        for k in range(1, 9):
            d = (back + k) % 8
            ny, nx = cur[0] + _MOORE[d][0], cur[1] + _MOORE[d][1]
            if m[ny, nx]:
                prev_d = (back + k - 1) % 8
                # Backtrack becomes the direction pointing at the previously
                # scanned (background) neighbor, seen from the new pixel.
                back = (_MOORE.index(
                    (
                        cur[0] + _MOORE[prev_d][0] - ny,
                        cur[1] + _MOORE[prev_d][1] - nx,
                    )
                ))
                cur = (ny, nx)
                found = True
                break
        if not found:  # isolated pixel; excluded by the preconditions
            raise DegenerateInputError("contour tracing found no neighbor")
        if cur == start and back == start_back:
            break
        state = (cur, back)
        if state in seen:
            # The walk re-entered a previously seen state without passing
            # the start state again: the tail before that state is a spur
            # and the repeated segment is the full boundary loop.
            contour = contour[seen[state]:]
            break
        seen[state] = len(contour)
        contour.append(cur)
    else:
        raise DegenerateInputError("contour tracing did not close")

    pts = np.array(
        [(x - 1 + x0, y - 1 + y0) for (y, x) in contour] + [(contour[0][1] - 1 + x0, contour[0][0] - 1 + y0)],
        dtype=float,
    )
    return Polyline(points=pts, closed=True)


def tissue_mask(
    slide: np.ndarray,
    close_radius: int = DEFAULT_CLOSE_RADIUS,
    invert: bool = False,
) -> np.ndarray:
    """Foreground-tissue mask: gray -> Otsu -> dark class -> closing.

    ``invert`` keeps the bright class instead, for stains where tissue
    is lighter than background. Raises :class:`DegenerateInputError`
    when the slide has no contrast (single gray level) or the resulting
    mask is empty.
    """
    gray = to_gray(slide)
    hist = gray_histogram(gray)
    if np.count_nonzero(hist) < 2:
        raise DegenerateInputError("slide has a single gray level; no tissue/background contrast")
    t = otsu_threshold(hist)
    mask = (gray >= t) if invert else (gray < t)
    if not mask.any():
        raise DegenerateInputError("tissue mask is empty")
    return morph_close(mask, close_radius)

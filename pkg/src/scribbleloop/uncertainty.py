"""Monte-Carlo dropout uncertainty measures.

Per patch: binary entropy of the MC-mean score (in bits) and the
population standard deviation of the score vector. Per slide: means of
both over the predicted-tumor patch set, min-max normalized against a
calibration range so the correction policy can scale its effort, plus
a signed entropy map that points at potential false negatives (−) and
false positives (+) relative to the operating threshold.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backbone import McRecord


@dataclass(frozen=True)
class Calibration:
    h_min: float
    h_max: float

    def __post_init__(self) -> None:
        if not self.h_min < self.h_max:
            raise ValueError("calibration needs h_min < h_max")


@dataclass(frozen=True)
class WsiUncertainty:
    h_wsi: float
    sigma_wsi: float
    tumor_ids: frozenset[int]
    empty_t: bool


@dataclass
class UncertaintyReport:
    patch_ids: list[int]
    entropy: np.ndarray
    std: np.ndarray
    signed: np.ndarray
    h_wsi: float
    sigma_wsi: float
    empty_t: bool
    t_thresh: float
    h_star: float | None = None


def _binary_entropy(p: np.ndarray) -> np.ndarray:
    """Entropy in bits of Bernoulli(p); 0 at p in {0, 1} by convention."""
    p = np.asarray(p, dtype=np.float64)
    out = np.zeros(p.shape)
    inner = (p > 0.0) & (p < 1.0)
    q = p[inner]
    out[inner] = -(q * np.log2(q) + (1.0 - q) * np.log2(1.0 - q))
    return out


def _validate_scores(x_p) -> np.ndarray:
    x = np.asarray(x_p, dtype=np.float64)
    if x.ndim != 1 or len(x) < 2:
        raise ValueError("score vector needs at least 2 entries")
    if x.min() < 0.0 or x.max() > 1.0:
        raise ValueError("scores must lie in [0, 1]")
    return x


def patch_entropy(x_p) -> float:
    """Binary entropy (bits) of the mean MC score."""
    x = _validate_scores(x_p)
    return float(_binary_entropy(np.array(x.mean())))


def patch_std(x_p) -> float:
    """Population standard deviation of the MC scores."""
    x = _validate_scores(x_p)
    return float(x.std())


def _stacked(records: list[McRecord]) -> tuple[np.ndarray, np.ndarray]:
    if not records:
        raise ValueError("need at least one record")
    scores = np.stack([np.asarray(r.mc_scores, dtype=np.float64) for r in records])
    if scores.shape[1] < 2:
        raise ValueError("records need at least 2 MC scores each")
    return scores, scores.mean(axis=1)


def wsi_uncertainty(records: list[McRecord], t_thresh: float) -> WsiUncertainty:
    """Mean entropy and std over patches whose MC-mean exceeds t_thresh.

    Averaging over the predicted-tumor set keeps the aggregates
    independent of tumor size. An empty set yields (0, 0) with the
    empty flag raised so callers can route the slide to manual review.
    """
    scores, means = _stacked(records)
    member = means > t_thresh
    tumor_ids = frozenset(r.patch_id for r, m in zip(records, member) if m)
    if not tumor_ids:
        return WsiUncertainty(0.0, 0.0, frozenset(), True)
    h = _binary_entropy(means[member])
    s = scores[member].std(axis=1)
    return WsiUncertainty(float(h.mean()), float(s.mean()), tumor_ids, False)


def normalize_h(h_wsi: float, calib: Calibration) -> float:
    """Min-max normalize a slide-level entropy, clamped to [0, 1]."""
    value = (h_wsi - calib.h_min) / (calib.h_max - calib.h_min)
    return float(min(1.0, max(0.0, value)))


def calibrate(h_values) -> Calibration:
    """Calibration range from slide-level entropies of a reference set."""
    values = [float(v) for v in h_values]
    if len(values) < 2:
        raise ValueError("calibration needs at least 2 slide entropies")
    return Calibration(h_min=min(values), h_max=max(values))


def signed_map(records: list[McRecord], t_thresh: float) -> np.ndarray:
    """Per-record signed entropy: negative below the threshold.

    Magnitude is the patch entropy; the sign follows the comparison of
    the MC-mean against t_thresh, with equality mapping to +1.
    """
    scores, means = _stacked(records)
    h = _binary_entropy(means)
    sign = np.where(means >= t_thresh, 1.0, -1.0)
    return sign * h


def build_report(
    records: list[McRecord],
    t_thresh: float,
    calib: Calibration | None = None,
) -> UncertaintyReport:
    scores, means = _stacked(records)
    entropy = _binary_entropy(means)
    std = scores.std(axis=1)
    signed = np.where(means >= t_thresh, 1.0, -1.0) * entropy
    agg = wsi_uncertainty(records, t_thresh)
    h_star = normalize_h(agg.h_wsi, calib) if calib is not None else None
    return UncertaintyReport(
        patch_ids=[r.patch_id for r in records],
        entropy=entropy,
        std=std,
        signed=signed,
        h_wsi=agg.h_wsi,
        sigma_wsi=agg.sigma_wsi,
        empty_t=agg.empty_t,
        t_thresh=float(t_thresh),
        h_star=h_star,
    )


def write_report(path: str | Path, report: UncertaintyReport, slide_id: str = "") -> None:
    payload = {
        "version": 1,
        "slide_id": slide_id,
        "t_thresh": report.t_thresh,
        "patch_ids": report.patch_ids,
        "entropy": [float(v) for v in report.entropy],
        "std": [float(v) for v in report.std],
        "signed": [float(v) for v in report.signed],
        "h_wsi": report.h_wsi,
        "sigma_wsi": report.sigma_wsi,
        "empty_t": report.empty_t,
        "h_star": report.h_star,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def read_report(path: str | Path) -> UncertaintyReport:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("version") != 1:
        raise ValueError("unsupported uncertainty report version")
    return UncertaintyReport(
        patch_ids=[int(v) for v in payload["patch_ids"]],
        entropy=np.array(payload["entropy"], dtype=np.float64),
        std=np.array(payload["std"], dtype=np.float64),
        signed=np.array(payload["signed"], dtype=np.float64),
        h_wsi=float(payload["h_wsi"]),
        sigma_wsi=float(payload["sigma_wsi"]),
        empty_t=bool(payload["empty_t"]),
        t_thresh=float(payload["t_thresh"]),
        h_star=None if payload.get("h_star") is None else float(payload["h_star"]),
    )

"""Rough patch classifier.

Patches are reduced to a 30-value color-statistics descriptor and
scored by a one-hidden-layer network with dropout on the latent layer,
trained with Adam on binary cross-entropy. The network provides the
three things downstream correction needs: a dropout-free score, latent
features, and Monte-Carlo dropout score vectors. Externally computed
features (for example from a real CNN) enter through the same McRecord
shape via the NDJSON ingestion path.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import DegenerateInputError, FeatureFileError

D_RAW = 30
SCORE_EPS = 1e-7


@dataclass
class BackboneModel:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float
    p_dropout: float = 0.2
    loss_history: list[float] = field(default_factory=list)

    @property
    def d_raw(self) -> int:
        return self.w1.shape[0]

    @property
    def d_latent(self) -> int:
        return self.w1.shape[1]

    def latent(self, x: np.ndarray) -> np.ndarray:
        """Dropout-free hidden activations for descriptors x (N, D_raw)."""
        return np.maximum(np.atleast_2d(x) @ self.w1 + self.b1, 0.0)

    def score(self, x: np.ndarray) -> np.ndarray:
        """Dropout-free scores, strictly inside (0, 1)."""
        z = self.latent(x) @ self.w2 + self.b2
        return np.clip(expit(z), SCORE_EPS, 1.0 - SCORE_EPS)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 10
    batch_size: int = 8
    augment_flips: bool = False
    augment_rot90: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")


@dataclass
class McRecord:
    patch_id: int
    features: np.ndarray
    mc_scores: np.ndarray
    score: float
    x: int = 0
    y: int = 0

    @property
    def mean(self) -> float:
        return float(self.mc_scores.mean())


@dataclass(frozen=True)
class ThresholdConfig:
    t_thresh: float
    overlap: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 < self.t_thresh < 1.0:
            raise ValueError("t_thresh must be in (0, 1)")


# ---------------------------------------------------------------------------
# descriptor
# ---------------------------------------------------------------------------


def extract_descriptor(patch: np.ndarray) -> np.ndarray:
    """30 color statistics in [0, 1]: per-channel mean, std, 8-bin histogram.

    Invariant to flips and 90-degree rotations by construction.
    """
    if patch.ndim != 3 or patch.shape[2] != 3:
        raise ValueError("patch must be an RGB array")
    pixels = patch.reshape(-1, 3).astype(np.float64)
    means = pixels.mean(axis=0) / 255.0
    stds = pixels.std(axis=0) / 127.5
    hists = []
    bins = np.clip(pixels // 32.0, 0, 7).astype(np.intp)
    for c in range(3):
        counts = np.bincount(bins[:, c], minlength=8)[:8]
        hists.append(counts / counts.sum())
    return np.concatenate([means, stds, *hists])


def descriptors_for_grid(image: np.ndarray, grid) -> np.ndarray:
    """Descriptor matrix (N, 30) for every patch of a grid."""
    size = grid.spec.patch_size
    out = np.empty((len(grid.patches), D_RAW))
    for k, p in enumerate(grid.patches):
        out[k] = extract_descriptor(image[p.y : p.y + size, p.x : p.x + size])
    return out


def _augmented_views(patch: np.ndarray, flips: bool, rot90: bool) -> list[np.ndarray]:
    views = [patch]
    if flips:
        views += [patch[:, ::-1], patch[::-1, :]]
    if rot90:
        views += [np.rot90(patch, k) for k in (1, 2, 3)]
    return views


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def _init_model(d_raw: int, d_latent: int, p_dropout: float, rng: np.random.Generator) -> BackboneModel:
    w1 = rng.normal(0.0, math.sqrt(2.0 / d_raw), size=(d_raw, d_latent))
    w2 = rng.normal(0.0, 1.0 / math.sqrt(d_latent), size=d_latent)
    return BackboneModel(w1=w1, b1=np.zeros(d_latent), w2=w2, b2=0.0, p_dropout=p_dropout)


def _forward(model: BackboneModel, x: np.ndarray, mask: np.ndarray | None):
    z1 = x @ model.w1 + model.b1
    a1 = np.maximum(z1, 0.0)
    if mask is not None:
        a1 = a1 * mask / (1.0 - model.p_dropout)
    z2 = a1 @ model.w2 + model.b2
    s = expit(z2)
    return z1, a1, s


def bce_loss(scores: np.ndarray, labels: np.ndarray) -> float:
    s = np.clip(scores, 1e-12, 1.0 - 1e-12)
    return float(np.mean(-labels * np.log(s) - (1.0 - labels) * np.log(1.0 - s)))


def loss_and_gradients(model: BackboneModel, x: np.ndarray, y: np.ndarray, mask: np.ndarray | None = None):
    """BCE loss plus analytic gradients for every parameter."""
    n = len(x)
    z1, a1, s = _forward(model, x, mask)
    loss = bce_loss(s, y)
    dz2 = (s - y) / n
    dw2 = a1.T @ dz2
    db2 = float(dz2.sum())
    da1 = np.outer(dz2, model.w2)
    if mask is not None:
        da1 = da1 * mask / (1.0 - model.p_dropout)
    dz1 = da1 * (z1 > 0.0)
    dw1 = x.T @ dz1
    db1 = dz1.sum(axis=0)
    return loss, {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2}


class _Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m.get(k, 0.0) + (1 - self.beta1) * np.asarray(g)
            self.v[k] = self.beta2 * self.v.get(k, 0.0) + (1 - self.beta2) * np.square(g)
            mhat = self.m[k] / (1 - self.beta1**self.t)
            vhat = self.v[k] / (1 - self.beta2**self.t)
            params[k] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def train_on_descriptors(
    x: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig,
    d_latent: int = 32,
    p_dropout: float = 0.2,
) -> BackboneModel:
    """Seeded Adam training of the two-layer network on descriptors."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(set(np.unique(y))) < 2:
        raise DegenerateInputError("training set must contain both classes")
    rng = np.random.default_rng(cfg.seed)
    model = _init_model(x.shape[1], d_latent, p_dropout, rng)
    opt = _Adam(cfg.learning_rate)
    params = {"w1": model.w1, "b1": model.b1, "w2": model.w2}
    b2_box = np.array(model.b2)

    for _epoch in range(cfg.epochs):
        order = rng.permutation(len(x))
        for start in range(0, len(x), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb, yb = x[idx], y[idx]
            mask = None
            if p_dropout > 0:
                mask = (rng.random((len(xb), d_latent)) >= p_dropout).astype(np.float64)
            model.b2 = float(b2_box)
            _, grads = loss_and_gradients(model, xb, yb, mask)
            grads["b2"] = np.array(grads["b2"])
            params_all = dict(params, b2=b2_box)
            opt.step(params_all, grads)
            model.b2 = float(b2_box)
        model.loss_history.append(bce_loss(model.score(x), y))
    return model


def train_backbone(patches: list[np.ndarray], labels, cfg: TrainConfig) -> BackboneModel:
    """Train from raw patch pixels, applying configured augmentations.

    The descriptor is flip and rotation invariant, so the augmented
    views only duplicate samples; the flags exist for pipeline parity
    with richer backbones.
    """
    xs, ys = [], []
    for patch, label in zip(patches, labels):
        for view in _augmented_views(patch, cfg.augment_flips, cfg.augment_rot90):
            xs.append(extract_descriptor(view))
            ys.append(float(label))
    return train_on_descriptors(np.array(xs), np.array(ys), cfg)


# ---------------------------------------------------------------------------
# Monte-Carlo prediction
# ---------------------------------------------------------------------------


def predict_mc(
    model: BackboneModel,
    descriptor: np.ndarray,
    n_mc: int,
    seed: int,
    patch_id: int = 0,
    x: int = 0,
    y: int = 0,
) -> McRecord:
    """n_mc dropout forward passes plus one clean pass for one patch.

    The dropout masks derive from (seed, patch_id), so per-patch results
    are independent of evaluation order and batch composition.
    """
    if n_mc < 2:
        raise ValueError("n_mc must be >= 2")
    descriptor = np.asarray(descriptor, dtype=np.float64)
    latent = model.latent(descriptor)[0]
    clean = float(model.score(descriptor)[0])
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(patch_id)]))
    p = model.p_dropout
    if p > 0:
        masks = (rng.random((n_mc, model.d_latent)) >= p).astype(np.float64) / (1.0 - p)
    else:
        masks = np.ones((n_mc, model.d_latent))
    z2 = (latent * masks) @ model.w2 + model.b2
    scores = np.clip(expit(z2), SCORE_EPS, 1.0 - SCORE_EPS)
    return McRecord(patch_id=patch_id, features=latent, mc_scores=scores, score=clean, x=x, y=y)


def predict_grid(model: BackboneModel, descriptors: np.ndarray, grid, n_mc: int, seed: int) -> list[McRecord]:
    """McRecords for every patch of a grid, aligned to patch ids."""
    return [
        predict_mc(model, descriptors[p.id], n_mc, seed, patch_id=p.id, x=p.x, y=p.y)
        for p in grid.patches
    ]


# ---------------------------------------------------------------------------
# threshold optimization
# ---------------------------------------------------------------------------


def optimize_threshold(scores, labels, overlap: float = 0.5, step: float = 0.01) -> ThresholdConfig:
    """Grid scan of t maximizing F1 of (score > t); smallest t on ties."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if len(scores) != len(labels):
        raise ValueError("scores and labels must align")
    if labels.min() == labels.max():
        raise DegenerateInputError("threshold optimization needs both classes")
    best_t, best_f1 = None, -1.0
    n_steps = int(round(1.0 / step)) - 1
    for k in range(1, n_steps + 1):
        t = k * step
        pred = scores > t
        tp = int(np.sum(pred & (labels == 1)))
        fp = int(np.sum(pred & (labels == 0)))
        fn = int(np.sum(~pred & (labels == 1)))
        f1 = 2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) > 0 else 0.0
        if f1 > best_f1 + 1e-12:
            best_t, best_f1 = t, f1
    return ThresholdConfig(t_thresh=round(best_t, 10), overlap=overlap)


# ---------------------------------------------------------------------------
# model checkpoint: single JSON file
# ---------------------------------------------------------------------------


def save_model(path: str | Path, model: BackboneModel, threshold: ThresholdConfig | None = None) -> None:
    payload = {
        "version": 1,
        "d_raw": model.d_raw,
        "d_latent": model.d_latent,
        "p_dropout": model.p_dropout,
        "w1": model.w1.tolist(),
        "b1": model.b1.tolist(),
        "w2": model.w2.tolist(),
        "b2": model.b2,
        "loss_history": model.loss_history,
    }
    if threshold is not None:
        payload["t_thresh"] = threshold.t_thresh
        payload["overlap"] = threshold.overlap
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_model(path: str | Path) -> tuple[BackboneModel, ThresholdConfig | None]:
    with open(path) as fh:
        payload = json.load(fh)
    model = BackboneModel(
        w1=np.array(payload["w1"], dtype=np.float64),
        b1=np.array(payload["b1"], dtype=np.float64),
        w2=np.array(payload["w2"], dtype=np.float64),
        b2=float(payload["b2"]),
        p_dropout=float(payload["p_dropout"]),
        loss_history=list(payload.get("loss_history", [])),
    )
    threshold = None
    if "t_thresh" in payload:
        threshold = ThresholdConfig(t_thresh=payload["t_thresh"], overlap=payload.get("overlap", 0.5))
    return model, threshold


# ---------------------------------------------------------------------------
# feature file exchange (NDJSON)
# ---------------------------------------------------------------------------


def export_features(path: str | Path, records: list[McRecord], slide_id: str) -> None:
    if not records:
        raise ValueError("nothing to export")
    d_latent = len(records[0].features)
    n_mc = len(records[0].mc_scores)
    with open(path, "w") as fh:
        header = {"version": 1, "d_latent": d_latent, "n_mc": n_mc, "slide_id": slide_id}
        fh.write(json.dumps(header) + "\n")
        for r in records:
            rec = {
                "patch_id": int(r.patch_id),
                "x": int(r.x),
                "y": int(r.y),
                "features": [float(v) for v in r.features],
                "mc_scores": [float(v) for v in r.mc_scores],
                "score": float(r.score),
            }
            fh.write(json.dumps(rec) + "\n")


def ingest_features(path: str | Path) -> tuple[list[McRecord], dict]:
    """Parse and validate a feature NDJSON file.

    Returns the records plus the header. Any malformed line raises
    FeatureFileError carrying its 1-based line number.
    """
    records: list[McRecord] = []
    with open(path) as fh:
        try:
            header = json.loads(fh.readline())
        except json.JSONDecodeError:
            raise FeatureFileError("header is not valid JSON", line=1)
        for key in ("version", "d_latent", "n_mc", "slide_id"):
            if key not in header:
                raise FeatureFileError(f"header missing {key!r}", line=1)
        d_latent = int(header["d_latent"])
        n_mc = int(header["n_mc"])
        for lineno, raw in enumerate(fh, start=2):
            raw = raw.strip()
            if not raw:
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError:
                raise FeatureFileError("record is not valid JSON", line=lineno)
            for key in ("patch_id", "x", "y", "features", "mc_scores"):
                if key not in rec:
                    raise FeatureFileError(f"record missing {key!r}", line=lineno)
            features = np.asarray(rec["features"], dtype=np.float64)
            scores = np.asarray(rec["mc_scores"], dtype=np.float64)
            if features.shape != (d_latent,):
                raise FeatureFileError(
                    f"expected {d_latent} features, got {features.shape}", line=lineno
                )
            if scores.shape != (n_mc,):
                raise FeatureFileError(f"expected {n_mc} mc_scores, got {scores.shape}", line=lineno)
            if not np.isfinite(features).all():
                raise FeatureFileError("features must be finite", line=lineno)
            if scores.min() < 0.0 or scores.max() > 1.0:
                raise FeatureFileError("mc_scores must lie in [0, 1]", line=lineno)
            score = float(rec.get("score", scores.mean()))
            if not 0.0 <= score <= 1.0:
                raise FeatureFileError("score must lie in [0, 1]", line=lineno)
            records.append(
                McRecord(
                    patch_id=int(rec["patch_id"]),
                    features=features,
                    mc_scores=scores,
                    score=score,
                    x=int(rec["x"]),
                    y=int(rec["y"]),
                )
            )
    return records, header

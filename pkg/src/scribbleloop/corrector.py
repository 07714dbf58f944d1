"""Interactive heatmap correction engine.

A linear SVM over the classifier's latent features is initialized from
the most confident rough predictions, then refit incrementally each
time the user draws corrective scribbles. Scribbled patches are hard
coded to their asserted value; every other patch follows the squashed
SVM margin. The number of refit epochs per pass either stays fixed
(naive policy) or scales with normalized slide-level uncertainty.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.special import expit, logit

from .backbone import SCORE_EPS, McRecord
from .errors import ContradictoryScribbleError, DegenerateInputError
from .scribbles import KIND_CORRECTIVE_FN, KIND_CORRECTIVE_FP, Scribble
from .tiling import PatchGrid, patches_along_scribble

DEFAULT_CAP = 1000
INIT_EPOCH_CAP = 200


@dataclass
class SvmModel:
    w: np.ndarray
    b: float = 0.0
    eta: float = 0.01
    lam: float = 1e-4

    def __post_init__(self) -> None:
        self.w = np.asarray(self.w, dtype=np.float64)
        if not np.isfinite(self.w).all() or not math.isfinite(self.b):
            raise ValueError("SVM parameters must be finite")
        if self.eta <= 0 or self.lam < 0:
            raise ValueError("eta must be positive and lam non-negative")

    def margin(self, x: np.ndarray) -> np.ndarray:
        return np.atleast_2d(x) @ self.w + self.b


@dataclass
class CorrectionPolicy:
    mode: str
    n_epoch_star: int = 30
    n_pass: int = 4
    used: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.mode not in ("naive", "uncertainty"):
            raise ValueError(f"unknown policy mode {self.mode!r}")
        if self.n_epoch_star < 1:
            raise ValueError("n_epoch_star must be >= 1")
        if self.n_pass < 1:
            raise ValueError("n_pass must be >= 1")


@dataclass
class CorrectionSession:
    slide_id: str
    grid: PatchGrid
    records: list[McRecord]
    latents: np.ndarray
    scores: np.ndarray
    heatmap: np.ndarray
    svm: SvmModel
    tp_ids: list[int]
    tn_ids: list[int]
    t_thresh: float
    cap: int
    seed: int
    corrective: dict[int, int] = field(default_factory=dict)
    hard_coded: dict[int, float] = field(default_factory=dict)
    passes: int = 0

    def binary_labels(self) -> np.ndarray:
        """Per-patch 0/1 decision at the current state.

        The rough heatmap binarizes at t_thresh; once correction passes
        have run, SVM-scored patches binarize at 0.5 (margin sign) and
        hard-coded patches report their asserted value.
        """
        if self.passes == 0:
            out = (self.scores > self.t_thresh).astype(np.int8)
        else:
            out = (self.heatmap > 0.5).astype(np.int8)
        for pid, value in self.hard_coded.items():
            out[pid] = int(value)
        return out


# ---------------------------------------------------------------------------
# SGD on L2-regularized hinge loss
# ---------------------------------------------------------------------------


@njit(cache=True)
def _sgd_epochs(w, b, x, y, orders, eta, lam):
    decay = 1.0 - eta * lam
    for e in range(orders.shape[0]):
        for k in range(orders.shape[1]):
            i = orders[e, k]
            m = b
            for d in range(w.shape[0]):
                m += w[d] * x[i, d]
            if y[i] * m < 1.0:
                for d in range(w.shape[0]):
                    w[d] = decay * w[d] + eta * y[i] * x[i, d]
                b += eta * y[i]
            else:
                for d in range(w.shape[0]):
                    w[d] = decay * w[d]
    return b


def hinge_objective(model: SvmModel, features: np.ndarray, labels: np.ndarray) -> float:
    """L2-regularized mean hinge loss of the current parameters."""
    margins = model.margin(features)
    hinge = np.maximum(0.0, 1.0 - labels * margins)
    return float(0.5 * model.lam * model.w @ model.w + hinge.mean())


def svm_fit_epochs(
    model: SvmModel,
    features: np.ndarray,
    labels: np.ndarray,
    n_epoch: int,
    seed: int,
) -> SvmModel:
    """Run n_epoch seeded-shuffle SGD epochs, updating the model in place.

    Per sample: on a margin violation (y*m < 1) the weights move toward
    the sample and the bias absorbs eta*y; otherwise only weight decay
    applies. The bias is never decayed.
    """
    if n_epoch < 1:
        raise ValueError("n_epoch must be >= 1")
    features = np.ascontiguousarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if len(features) != len(labels) or len(features) == 0:
        raise ValueError("features and labels must align and be nonempty")
    if labels.min() == labels.max():
        raise DegenerateInputError("refit dataset must contain both labels")
    rng = np.random.default_rng(seed)
    orders = np.stack([rng.permutation(len(features)) for _ in range(n_epoch)]).astype(np.int64)
    model.b = float(_sgd_epochs(model.w, model.b, features, labels, orders, model.eta, model.lam))
    return model


# ---------------------------------------------------------------------------
# session lifecycle
# ---------------------------------------------------------------------------


def _index_records(grid: PatchGrid, records: list[McRecord]):
    by_id = {r.patch_id: r for r in records}
    missing = [p.id for p in grid.patches if p.id not in by_id]
    if missing:
        raise ValueError(f"records missing for {len(missing)} grid patches (first: {missing[0]})")
    n = len(grid.patches)
    d = len(records[0].features)
    latents = np.empty((n, d))
    scores = np.empty(n)
    for p in grid.patches:
        rec = by_id[p.id]
        latents[p.id] = rec.features
        scores[p.id] = rec.score
    return latents, scores


def _rough_plane(latents: np.ndarray, scores: np.ndarray, t_thresh: float) -> tuple[np.ndarray, float]:
    """Hyperplane reproducing the rough decision in latent space.

    The rough binarization compares logit(score) against logit(t), so a
    least-squares fit of logit(score) - logit(t) over the latents gives
    the closest linear stand-in for that boundary. When scores really
    are a logistic readout of the latents the recovery is exact.
    """
    z = np.clip(scores, SCORE_EPS, 1.0 - SCORE_EPS)
    rhs = logit(z) - logit(t_thresh)
    a = np.hstack([latents, np.ones((len(latents), 1))])
    sol, *_ = np.linalg.lstsq(a, rhs, rcond=None)
    return sol[:-1], float(sol[-1])


def init_session(
    grid: PatchGrid,
    records: list[McRecord],
    t_thresh: float,
    cap: int = DEFAULT_CAP,
    slide_id: str = "",
    seed: int = 0,
) -> CorrectionSession:
    """Fit the SVM on the most confident rough predictions.

    Up to cap patches strictly above t_thresh (highest scores first)
    become positives and up to cap strictly below (lowest first) become
    negatives. The SVM starts at the least-squares reproduction of the
    rough boundary, rescaled so the confident sets sit at or beyond the
    unit margin, then trains until every init margin carries the right
    sign, or 200 epochs. The heatmap starts as the rough scores.
    """
    if cap < 1:
        raise ValueError("cap must be >= 1")
    latents, scores = _index_records(grid, records)
    above = [(float(scores[p.id]), p.id) for p in grid.patches if scores[p.id] > t_thresh]
    below = [(float(scores[p.id]), p.id) for p in grid.patches if scores[p.id] < t_thresh]
    if not above or not below:
        raise DegenerateInputError(
            "no confident patches on at least one side of the threshold; slide needs full review"
        )
    above.sort(key=lambda sp: (-sp[0], sp[1]))
    below.sort(key=lambda sp: (sp[0], sp[1]))
    tp_ids = [pid for _s, pid in above[:cap]]
    tn_ids = [pid for _s, pid in below[:cap]]

    ids = np.array(tp_ids + tn_ids)
    x = np.ascontiguousarray(latents[ids])
    y = np.concatenate([np.ones(len(tp_ids)), -np.ones(len(tn_ids))])
    w0, b0 = _rough_plane(latents, scores, t_thresh)
    raw = np.abs(x @ w0 + b0)
    # whole init set at or beyond the unit margin: hinge stays quiet on
    # it during refits until corrections actually push the plane
    scale = max(float(raw.min()), 1e-3 * float(np.median(raw)), 1e-12)
    w0, b0 = w0 / scale, b0 / scale
    svm = SvmModel(w=np.ascontiguousarray(w0, dtype=np.float64), b=b0)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0]))
    for _epoch in range(INIT_EPOCH_CAP):
        if np.all(y * svm.margin(x) > 0):
            break
        orders = rng.permutation(len(ids)).astype(np.int64).reshape(1, -1)
        svm.b = float(_sgd_epochs(svm.w, svm.b, x, y, orders, svm.eta, svm.lam))

    return CorrectionSession(
        slide_id=slide_id,
        grid=grid,
        records=records,
        latents=latents,
        scores=scores,
        heatmap=scores.copy(),
        svm=svm,
        tp_ids=tp_ids,
        tn_ids=tn_ids,
        t_thresh=float(t_thresh),
        cap=int(cap),
        seed=int(seed),
    )


def n_epoch_for(policy: CorrectionPolicy, h_star: float | None = None) -> int:
    """Refit epochs for one pass under the given policy.

    The uncertainty policy scales the reference epoch count by twice
    the normalized slide uncertainty (half-up rounding), clamped to
    [1, 2 * n_epoch_star]; the naive policy always uses the reference.
    """
    if h_star is not None and not 0.0 <= h_star <= 1.0:
        raise ValueError("normalized uncertainty must lie in [0, 1]")
    if policy.mode == "naive":
        return policy.n_epoch_star
    if policy.mode == "uncertainty":
        if h_star is None:
            raise ValueError("uncertainty policy needs the normalized slide uncertainty")
        n = math.floor(2.0 * h_star * policy.n_epoch_star + 0.5)
        return max(1, min(2 * policy.n_epoch_star, n))
    raise ValueError(f"unknown policy mode {policy.mode!r}")


def _collect_pass_labels(session: CorrectionSession, scribbles: list[Scribble]) -> dict[int, int]:
    """Patch labels asserted by this pass; conflicting assertions raise."""
    pass_labels: dict[int, int] = {}
    for scribble in scribbles:
        if scribble.kind == KIND_CORRECTIVE_FP:
            label = -1
        elif scribble.kind == KIND_CORRECTIVE_FN:
            label = 1
        else:
            raise ValueError(f"correction needs corrective scribbles, got kind {scribble.kind!r}")
        patches = patches_along_scribble(scribble, session.grid.spec, grid=session.grid)
        if not patches:
            raise ValueError("scribble does not touch any grid patch")
        for patch in patches:
            prior = pass_labels.get(patch.id)
            if prior is not None and prior != label:
                raise ContradictoryScribbleError(
                    f"patch {patch.id} asserted both tumor and non-tumor in one pass"
                )
            pass_labels[patch.id] = label
    return pass_labels


def apply_correction(
    session: CorrectionSession,
    scribbles: list[Scribble],
    policy: CorrectionPolicy,
    h_star: float | None = None,
) -> CorrectionSession:
    """Run one correction pass and update the whole heatmap.

    Scribbled patches join the training set with their asserted label
    (overwriting earlier assertions) and are hard coded on the heatmap;
    the SVM continues from its current weights for the policy's epoch
    count on the init set plus all accumulated corrections, and every
    non-hard-coded patch takes the squashed margin as its new score.
    """
    if not scribbles:
        raise ValueError("a correction pass needs at least one scribble")
    epochs = n_epoch_for(policy, h_star)
    pass_labels = _collect_pass_labels(session, scribbles)

    session.corrective.update(pass_labels)
    for pid, label in pass_labels.items():
        session.hard_coded[pid] = 1.0 if label > 0 else 0.0

    train: dict[int, int] = {pid: 1 for pid in session.tp_ids}
    train.update({pid: -1 for pid in session.tn_ids})
    train.update(session.corrective)
    ids = sorted(train)
    x = np.ascontiguousarray(session.latents[ids])
    y = np.array([float(train[pid]) for pid in ids])
    fit_seed = np.random.SeedSequence([session.seed, 1 + session.passes]).generate_state(1)[0]
    svm_fit_epochs(session.svm, x, y, epochs, seed=int(fit_seed))

    session.heatmap = expit(session.latents @ session.svm.w + session.svm.b)
    for pid, value in session.hard_coded.items():
        session.heatmap[pid] = value
    session.passes += 1
    policy.used.append(epochs)
    return session


# ---------------------------------------------------------------------------
# snapshot persistence
# ---------------------------------------------------------------------------


def session_to_json(session: CorrectionSession, policy: CorrectionPolicy | None = None) -> dict:
    """JSON-ready snapshot; grid and records are persisted separately."""
    payload = {
        "version": 1,
        "slide_id": session.slide_id,
        "t_thresh": session.t_thresh,
        "cap": session.cap,
        "seed": session.seed,
        "passes": session.passes,
        "svm": {
            "w": session.svm.w.tolist(),
            "b": session.svm.b,
            "eta": session.svm.eta,
            "lam": session.svm.lam,
        },
        "tp_ids": list(session.tp_ids),
        "tn_ids": list(session.tn_ids),
        "corrective": {str(pid): label for pid, label in session.corrective.items()},
        "hard_coded": {str(pid): value for pid, value in session.hard_coded.items()},
        "policy": None,
    }
    if policy is not None:
        payload["policy"] = {
            "mode": policy.mode,
            "n_epoch_star": policy.n_epoch_star,
            "n_pass": policy.n_pass,
            "used": list(policy.used),
        }
    return payload


def session_from_json(
    payload: dict,
    grid: PatchGrid,
    records: list[McRecord],
) -> tuple[CorrectionSession, CorrectionPolicy | None]:
    """Rebuild a session from its snapshot plus the persisted grid/records.

    The heatmap is recomputed from the restored weights and hard codes,
    so a snapshot taken after any pass restores byte-identical state.
    """
    if payload.get("version") != 1:
        raise ValueError("unsupported session snapshot version")
    latents, scores = _index_records(grid, records)
    svm = SvmModel(
        w=np.array(payload["svm"]["w"], dtype=np.float64),
        b=float(payload["svm"]["b"]),
        eta=float(payload["svm"]["eta"]),
        lam=float(payload["svm"]["lam"]),
    )
    session = CorrectionSession(
        slide_id=payload["slide_id"],
        grid=grid,
        records=records,
        latents=latents,
        scores=scores,
        heatmap=scores.copy(),
        svm=svm,
        tp_ids=[int(v) for v in payload["tp_ids"]],
        tn_ids=[int(v) for v in payload["tn_ids"]],
        t_thresh=float(payload["t_thresh"]),
        cap=int(payload["cap"]),
        seed=int(payload["seed"]),
        corrective={int(k): int(v) for k, v in payload["corrective"].items()},
        hard_coded={int(k): float(v) for k, v in payload["hard_coded"].items()},
        passes=int(payload["passes"]),
    )
    if session.passes > 0:
        session.heatmap = expit(session.latents @ svm.w + svm.b)
    for pid, value in session.hard_coded.items():
        session.heatmap[pid] = value
    policy = None
    if payload.get("policy"):
        p = payload["policy"]
        policy = CorrectionPolicy(
            mode=p["mode"],
            n_epoch_star=int(p["n_epoch_star"]),
            n_pass=int(p["n_pass"]),
            used=[int(v) for v in p["used"]],
        )
    return session, policy


def snapshot_dumps(session: CorrectionSession, policy: CorrectionPolicy | None = None) -> str:
    return json.dumps(session_to_json(session, policy), sort_keys=True)


def snapshot_loads(
    text: str, grid: PatchGrid, records: list[McRecord]
) -> tuple[CorrectionSession, CorrectionPolicy | None]:
    return session_from_json(json.loads(text), grid, records)

"""Patch-level metrics and the automated correction-simulation harness.

The harness replays the interactive workflow without a human: each
pass finds the largest false-positive and largest false-negative patch
regions against ground truth, draws one corrective scribble on each,
and feeds them to the correction engine. Repeated seeded runs aggregate
into per-pass tables of corpus means and per-slide run spread.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backbone import McRecord
from .corrector import CorrectionPolicy, apply_correction, init_session
from .errors import DegenerateInputError
from .scribbles import (
    KIND_CORRECTIVE_FN,
    KIND_CORRECTIVE_FP,
    ScribbleParams,
    corrective_scribble,
    misclassified_components,
)
from .tiling import PatchGrid, patches_along_scribble
from .uncertainty import Calibration, normalize_h, wsi_uncertainty

SCRIBBLE_TARGET = 10
METRIC_NAMES = ("balanced_accuracy", "precision", "recall", "f1")


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class WsiMetrics:
    balanced_accuracy: float
    precision: float
    recall: float
    f1: float

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in METRIC_NAMES}


def confusion(predicted, truth) -> Confusion:
    """Patch-level counts with tumor as the positive class."""
    predicted = np.asarray(predicted).astype(bool)
    truth = np.asarray(truth).astype(bool)
    if predicted.shape != truth.shape:
        raise ValueError("predicted and truth labels must align")
    return Confusion(
        tp=int(np.sum(predicted & truth)),
        fp=int(np.sum(predicted & ~truth)),
        tn=int(np.sum(~predicted & ~truth)),
        fn=int(np.sum(~predicted & truth)),
    )


def wsi_metrics(c: Confusion) -> WsiMetrics:
    """Balanced accuracy, precision, recall, F1; NaN marks undefined ratios."""
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn > 0 else math.nan
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp > 0 else math.nan
    tnr = c.tn / (c.tn + c.fp) if c.tn + c.fp > 0 else math.nan
    balanced = (recall + tnr) / 2.0 if not (math.isnan(recall) or math.isnan(tnr)) else math.nan
    denom = 2 * c.tp + c.fp + c.fn
    f1 = 2 * c.tp / denom if denom > 0 else math.nan
    return WsiMetrics(balanced_accuracy=balanced, precision=precision, recall=recall, f1=f1)


def pearson(xs, ys) -> float:
    """Sample Pearson correlation coefficient."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("series must be 1-D and aligned")
    if len(x) < 3:
        raise ValueError("correlation needs at least 3 points")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = float(np.sqrt(np.sum(dx * dx)))
    sy = float(np.sqrt(np.sum(dy * dy)))
    if sx == 0.0 or sy == 0.0:
        raise DegenerateInputError("correlation is undefined for a constant series")
    return float(np.sum(dx * dy) / (sx * sy))


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------


@dataclass
class SlideBundle:
    """Everything the harness needs to replay correction on one slide."""

    slide_id: str
    grid: PatchGrid
    records: list[McRecord]
    truth: np.ndarray
    t_thresh: float
    calib: Calibration | None = None


@dataclass(frozen=True)
class PassMetrics:
    pass_index: int
    counts: Confusion
    metrics: WsiMetrics
    n_epoch: int | None
    wall_ms: float


@dataclass
class RunResult:
    slide_id: str
    policy_mode: str
    seed: int
    passes: list[PassMetrics]
    early_stop_pass: int | None = None

    @property
    def f1_per_pass(self) -> list[float]:
        return [p.metrics.f1 for p in self.passes]


def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _largest(components):
    return min(components, key=lambda c: (-c.area, c.label))


def _pass_metrics(session, truth, pass_index, n_epoch, wall_ms) -> PassMetrics:
    counts = confusion(session.binary_labels(), truth)
    return PassMetrics(
        pass_index=pass_index,
        counts=counts,
        metrics=wsi_metrics(counts),
        n_epoch=n_epoch,
        wall_ms=wall_ms,
    )


def _scribble_patch_ids(scribble, grid) -> set[int]:
    return {p.id for p in patches_along_scribble(scribble, grid.spec, grid=grid)}


def simulate_run(
    bundle: SlideBundle,
    policy: CorrectionPolicy,
    n_pass: int = 4,
    seed: int = 0,
) -> RunResult:
    """Automated correction of one slide for n_pass passes.

    Pass 0 records the rough segmentation. Every later pass corrects
    the largest false-positive and largest false-negative regions with
    one scribble each; when none remain the run stops early and the
    stable metrics carry forward. All randomness derives from the seed.
    """
    grid = bundle.grid
    truth = np.asarray(bundle.truth).astype(bool)
    if len(truth) != len(grid.patches):
        raise ValueError("truth labels must align with grid patches")
    policy = CorrectionPolicy(mode=policy.mode, n_epoch_star=policy.n_epoch_star, n_pass=policy.n_pass)

    h_star = None
    if policy.mode == "uncertainty":
        if bundle.calib is None:
            raise ValueError("uncertainty policy needs a calibration range")
        agg = wsi_uncertainty(bundle.records, bundle.t_thresh)
        h_star = 0.0 if agg.empty_t else normalize_h(agg.h_wsi, bundle.calib)

    t0 = time.perf_counter()
    session = init_session(
        grid, bundle.records, bundle.t_thresh, slide_id=bundle.slide_id, seed=seed
    )
    passes = [_pass_metrics(session, truth, 0, None, (time.perf_counter() - t0) * 1000.0)]
    early_stop = None

    occupancy = grid.occupancy()
    for p in range(1, n_pass + 1):
        t0 = time.perf_counter()
        pred_cells = grid.cell_array(session.binary_labels(), fill=0.0) > 0.5
        truth_cells = grid.cell_array(truth.astype(float), fill=0.0) > 0.5
        pred_cells &= occupancy
        truth_cells &= occupancy
        fp_comps, fn_comps = misclassified_components(pred_cells, truth_cells)
        if not fp_comps and not fn_comps:
            early_stop = p
            break

        scribbles = []
        if fp_comps:
            params = ScribbleParams(seed=_derived_seed(seed, p, 0))
            scribbles.append(
                corrective_scribble(_largest(fp_comps), grid, SCRIBBLE_TARGET, params, KIND_CORRECTIVE_FP)
            )
        if fn_comps:
            fn_comp = _largest(fn_comps)
            params = ScribbleParams(seed=_derived_seed(seed, p, 1))
            fn_scrib = corrective_scribble(fn_comp, grid, SCRIBBLE_TARGET, params, KIND_CORRECTIVE_FN)
            if scribbles:
                # regenerate rather than assert two labels on one patch
                taken = _scribble_patch_ids(scribbles[0], grid)
                for retry in range(1, 9):
                    if not (taken & _scribble_patch_ids(fn_scrib, grid)):
                        break
                    params = ScribbleParams(seed=_derived_seed(seed, p, 1, retry))
                    fn_scrib = corrective_scribble(fn_comp, grid, SCRIBBLE_TARGET, params, KIND_CORRECTIVE_FN)
                if taken & _scribble_patch_ids(fn_scrib, grid):
                    fn_scrib = None
            if fn_scrib is not None:
                scribbles.append(fn_scrib)

        epochs = None
        if scribbles:
            apply_correction(session, scribbles, policy, h_star=h_star)
            epochs = policy.used[-1]
        wall_ms = (time.perf_counter() - t0) * 1000.0
        passes.append(_pass_metrics(session, truth, p, epochs, wall_ms))

    # After an early stop no further correction happens; the remaining
    # rows repeat the converged measurement so every run table is
    # (n_pass + 1) entries long.
    while len(passes) < n_pass + 1:
        last = passes[-1]
        passes.append(
            PassMetrics(
                pass_index=len(passes),
                counts=last.counts,
                metrics=last.metrics,
                n_epoch=None,
                wall_ms=0.0,
            )
        )
    return RunResult(
        slide_id=bundle.slide_id,
        policy_mode=policy.mode,
        seed=seed,
        passes=passes,
        early_stop_pass=early_stop,
    )


# ---------------------------------------------------------------------------
# experiment aggregation
# ---------------------------------------------------------------------------


@dataclass
class ExperimentTable:
    policy_mode: str
    n_epoch_star: int
    runs: int
    n_pass: int
    means: np.ndarray  # (n_pass + 1, len(METRIC_NAMES))
    stds: np.ndarray
    results: list[RunResult] = field(default_factory=list)


def _det_mean(values) -> float:
    """Order-independent mean ignoring NaN markers."""
    arr = np.sort(np.asarray(values, dtype=np.float64))
    arr = arr[~np.isnan(arr)]
    return float(arr.mean()) if len(arr) else math.nan


def _det_std(values) -> float:
    arr = np.sort(np.asarray(values, dtype=np.float64))
    arr = arr[~np.isnan(arr)]
    return float(arr.std()) if len(arr) else math.nan


def corpus_experiment(
    bundles: list[SlideBundle],
    policy: CorrectionPolicy,
    runs: int = 10,
    n_pass: int = 4,
    base_seed: int = 0,
) -> ExperimentTable:
    """Repeated seeded simulation over a corpus.

    Cell (pass, metric) of the table holds the mean over every
    (slide, run) pair; the spread table holds the per-slide standard
    deviation across runs, averaged over slides.
    """
    if not bundles:
        raise ValueError("need at least one slide bundle")
    if runs < 1:
        raise ValueError("runs must be >= 1")
    ordered = sorted(bundles, key=lambda b: b.slide_id)
    results: list[RunResult] = []
    for k, bundle in enumerate(ordered):
        for r in range(runs):
            results.append(simulate_run(bundle, policy, n_pass, seed=_derived_seed(base_seed, k, r)))

    means = np.zeros((n_pass + 1, len(METRIC_NAMES)))
    stds = np.zeros_like(means)
    for p in range(n_pass + 1):
        for m, name in enumerate(METRIC_NAMES):
            values = [getattr(res.passes[p].metrics, name) for res in results]
            means[p, m] = _det_mean(values)
            per_slide = []
            for bundle in ordered:
                slide_vals = [
                    getattr(res.passes[p].metrics, name)
                    for res in results
                    if res.slide_id == bundle.slide_id
                ]
                per_slide.append(_det_std(slide_vals))
            stds[p, m] = _det_mean(per_slide)
    return ExperimentTable(
        policy_mode=policy.mode,
        n_epoch_star=policy.n_epoch_star,
        runs=runs,
        n_pass=n_pass,
        means=means,
        stds=stds,
        results=results,
    )


@dataclass(frozen=True)
class TuneResult:
    best: int
    scores: dict[int, float]


def tune_n_epoch(
    candidates,
    bundles: list[SlideBundle],
    n_pass: int = 4,
    runs: int = 10,
    base_seed: int = 0,
) -> TuneResult:
    """Pick the naive-mode epoch count with the best final-pass mean F1.

    Ties resolve to the smallest candidate.
    """
    cands = sorted(set(int(c) for c in candidates))
    if not cands:
        raise ValueError("candidate grid must be nonempty")
    scores: dict[int, float] = {}
    best, best_score = None, -math.inf
    for cand in cands:
        policy = CorrectionPolicy(mode="naive", n_epoch_star=cand, n_pass=n_pass)
        table = corpus_experiment(bundles, policy, runs=runs, n_pass=n_pass, base_seed=base_seed)
        score = float(table.means[n_pass, METRIC_NAMES.index("f1")])
        scores[cand] = score
        if score > best_score + 1e-12:
            best, best_score = cand, score
    return TuneResult(best=best, scores=scores)


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------


def _metrics_row(pm: PassMetrics) -> dict:
    row = {
        "pass": pm.pass_index,
        "tp": pm.counts.tp,
        "fp": pm.counts.fp,
        "tn": pm.counts.tn,
        "fn": pm.counts.fn,
        "n_epoch": pm.n_epoch,
    }
    for name in METRIC_NAMES:
        value = getattr(pm.metrics, name)
        row[name] = None if math.isnan(value) else value
    return row


def write_run_results(path: str | Path, results: list[RunResult]) -> None:
    """Deterministic run log; wall-clock lives in the timings sidecar."""
    payload = {
        "version": 1,
        "results": [
            {
                "slide_id": res.slide_id,
                "policy_mode": res.policy_mode,
                "seed": res.seed,
                "early_stop_pass": res.early_stop_pass,
                "passes": [_metrics_row(pm) for pm in res.passes],
            }
            for res in results
        ],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_timings(path: str | Path, results: list[RunResult]) -> None:
    payload = {
        "version": 1,
        "timings": [
            {
                "slide_id": res.slide_id,
                "seed": res.seed,
                "wall_ms": [round(pm.wall_ms, 3) for pm in res.passes],
            }
            for res in results
        ],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_experiment_csv(path: str | Path, table: ExperimentTable) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pass"] + [f"{n}_{s}" for n in METRIC_NAMES for s in ("mean", "std")])
        for p in range(table.n_pass + 1):
            row: list = [p]
            for m in range(len(METRIC_NAMES)):
                row.append(f"{table.means[p, m]:.6f}")
                row.append(f"{table.stds[p, m]:.6f}")
            writer.writerow(row)


def write_experiment_json(path: str | Path, table: ExperimentTable) -> None:
    payload = {
        "version": 1,
        "policy_mode": table.policy_mode,
        "n_epoch_star": table.n_epoch_star,
        "runs": table.runs,
        "n_pass": table.n_pass,
        "metrics": list(METRIC_NAMES),
        "means": [[None if math.isnan(v) else float(v) for v in row] for row in table.means],
        "stds": [[None if math.isnan(v) else float(v) for v in row] for row in table.stds],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_experiment_json(path: str | Path) -> ExperimentTable:
    """Rebuild a summary table (without per-run results) from its JSON."""
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("version") != 1 or payload.get("metrics") != list(METRIC_NAMES):
        raise ValueError(f"{path} is not a version-1 experiment file")

    def grid(rows):
        return np.array(
            [[math.nan if v is None else float(v) for v in row] for row in rows]
        )

    return ExperimentTable(
        policy_mode=payload["policy_mode"],
        n_epoch_star=int(payload["n_epoch_star"]),
        runs=int(payload["runs"]),
        n_pass=int(payload["n_pass"]),
        means=grid(payload["means"]),
        stds=grid(payload["stds"]),
    )


def experiment_markdown(table: ExperimentTable) -> str:
    """Render per-pass mean ± spread rows as a percent table."""
    titles = {
        "balanced_accuracy": "Balanced Accuracy(%)",
        "precision": "Precision(%)",
        "recall": "Recall(%)",
        "f1": "F1 score(%)",
    }
    lines = [
        f"Policy: {table.policy_mode} (reference epochs {table.n_epoch_star}, "
        f"{table.runs} runs per slide)",
        "",
        "| Pass | " + " | ".join(titles[n] for n in METRIC_NAMES) + " |",
        "|" + "---|" * (len(METRIC_NAMES) + 1),
    ]
    for p in range(table.n_pass + 1):
        label = "rough" if p == 0 else str(p)
        cells = []
        for m in range(len(METRIC_NAMES)):
            mean, std = table.means[p, m], table.stds[p, m]
            if math.isnan(mean):
                cells.append("n/a")
            else:
                cells.append(f"{100 * mean:.1f} ± {100 * std:.1f}")
        lines.append(f"| {label} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"

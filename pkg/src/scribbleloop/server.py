"""HTTP service for interactive heatmap-correction sessions.

The service owns a data root with a slide corpus, a trained rough
model, and a session snapshot directory:

    <data_root>/
        corpus/         manifest.json plus one directory per slide
        model.json      rough classifier checkpoint with its threshold
        features/       optional per-slide NDJSON feature files
        sessions/       one JSON snapshot per session, updated each pass

Sessions live in memory and are snapshotted after every pass, so a
restarted process replays any session to the identical heatmap. All
responses are JSON except the slide preview image.
"""

from __future__ import annotations

import io
import json
import math
import os
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from PIL import Image

from .backbone import BackboneModel, ThresholdConfig, ingest_features, load_model
from .corpus import CorpusManifest, load_manifest, load_slide
from .corrector import (
    CorrectionPolicy,
    CorrectionSession,
    apply_correction,
    init_session,
    session_from_json,
    session_to_json,
)
from .errors import ContradictoryScribbleError, DegenerateInputError
from .evalsim import confusion, wsi_metrics
from .imageops import Polyline
from .pipeline import DEFAULT_N_MC, DEFAULT_SPEC, manifest_calibration, predict_slide
from .scribbles import (
    CLASS_NON_TUMOR,
    CLASS_TUMOR,
    KIND_CORRECTIVE_FN,
    KIND_CORRECTIVE_FP,
    Scribble,
)
from .tiling import build_grid, grid_labels, patches_along_scribble
from .uncertainty import normalize_h, signed_map, wsi_uncertainty

ENV_DATA_ROOT = "SCRIBBLELOOP_DATA_ROOT"
PREVIEW_MAX_SIDE = 512
Q16_MAX = 65535
FEATURE_SEED = 0
SNAPSHOT_VERSION = 1


class ApiError(Exception):
    """Error with a stable machine-readable code and an HTTP status."""

    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message

    def response(self) -> JSONResponse:
        return JSONResponse(
            status_code=self.status,
            content={"error": {"code": self.code, "message": self.message}},
        )


@dataclass
class SlideState:
    """Per-slide artifacts shared by all sessions on that slide."""

    slide_id: str
    grid: object
    records: list
    has_gt: bool
    truth: np.ndarray | None
    image_path: Path


@dataclass
class SessionRuntime:
    session_id: str
    slide: SlideState
    session: CorrectionSession
    policy: CorrectionPolicy
    h_star: float | None
    empty_t: bool
    seed: int
    pending: list[dict] = field(default_factory=list)
    history: list[dict] = field(default_factory=list)
    committed: dict = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)


def _quantize(values: np.ndarray) -> list[int]:
    q = np.rint(np.clip(values, 0.0, 1.0) * Q16_MAX).astype(int)
    return q.tolist()


def _grid_header(grid) -> dict:
    return {
        "rows": grid.n_rows,
        "cols": grid.n_cols,
        "patch_size": grid.spec.patch_size,
        "overlap": grid.spec.overlap,
        "shape": list(grid.shape),
    }


class AppState:
    """Data root, trained model, slide cache, and the session store."""

    def __init__(self, data_root: str | Path | None = None):
        root = data_root or os.environ.get(ENV_DATA_ROOT) or "data"
        self.root = Path(root)
        corpus_dir = self.root / "corpus"
        if not (corpus_dir / "manifest.json").exists():
            raise FileNotFoundError(f"no corpus manifest under {corpus_dir}")
        self.manifest: CorpusManifest = load_manifest(corpus_dir)
        self.sessions_dir = self.root / "sessions"
        self.sessions_dir.mkdir(parents=True, exist_ok=True)
        self._model: BackboneModel | None = None
        self._threshold: ThresholdConfig | None = None
        self._slides: dict[str, SlideState] = {}
        self._sessions: dict[str, SessionRuntime] = {}
        self._lock = threading.Lock()

    # -- model and slide artifacts ------------------------------------

    def model(self) -> tuple[BackboneModel, ThresholdConfig]:
        with self._lock:
            if self._model is None:
                path = self.root / "model.json"
                if not path.exists():
                    raise ApiError(409, "model_not_trained", f"no model checkpoint at {path}")
                model, threshold = load_model(path)
                if threshold is None:
                    raise ApiError(409, "model_not_trained", "checkpoint lacks a decision threshold")
                self._model, self._threshold = model, threshold
            return self._model, self._threshold

    def slide_entry(self, slide_id: str):
        try:
            return self.manifest.entry(slide_id)
        except KeyError:
            raise ApiError(404, "unknown_slide", f"slide {slide_id!r} is not in the corpus")

    def slide_state(self, slide_id: str) -> SlideState:
        with self._lock:
            cached = self._slides.get(slide_id)
        if cached is not None:
            return cached
        entry = self.slide_entry(slide_id)
        model, threshold = self.model()
        image, tumor, tissue = load_slide(self.manifest, slide_id)
        feature_file = self.root / "features" / f"{slide_id}.ndjson"
        if feature_file.exists():
            records, _meta = ingest_features(feature_file)
            grid = build_grid(tissue.shape, tissue, DEFAULT_SPEC, slide_id=slide_id)
        else:
            grid, records = predict_slide(
                model, image, tissue, n_mc=DEFAULT_N_MC, seed=FEATURE_SEED
            )
        has_gt = (self.manifest.root / entry.tumor_mask).exists()
        truth = grid_labels(grid, tumor).astype(bool) if has_gt else None
        state = SlideState(
            slide_id=slide_id,
            grid=grid,
            records=records,
            has_gt=has_gt,
            truth=truth,
            image_path=self.manifest.root / entry.image,
        )
        with self._lock:
            self._slides.setdefault(slide_id, state)
            return self._slides[slide_id]

    # -- session store ------------------------------------------------

    def session(self, session_id: str) -> SessionRuntime:
        with self._lock:
            runtime = self._sessions.get(session_id)
        if runtime is None:
            runtime = self._replay(session_id)
        if runtime is None:
            raise ApiError(404, "unknown_session", f"no session {session_id!r}")
        return runtime

    def register(self, runtime: SessionRuntime) -> None:
        with self._lock:
            self._sessions[runtime.session_id] = runtime

    def snapshot_path(self, session_id: str) -> Path:
        return self.sessions_dir / f"{session_id}.json"

    def persist(self, runtime: SessionRuntime) -> None:
        payload = {
            "version": SNAPSHOT_VERSION,
            "session_id": runtime.session_id,
            "slide_id": runtime.slide.slide_id,
            "n_mc": DEFAULT_N_MC,
            "feature_seed": FEATURE_SEED,
            "seed": runtime.seed,
            "h_star": runtime.h_star,
            "empty_t": runtime.empty_t,
            "history": runtime.history,
            "corrector": session_to_json(runtime.session, runtime.policy),
        }
        path = self.snapshot_path(runtime.session_id)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(payload, sort_keys=True))
        tmp.replace(path)

    def _replay(self, session_id: str) -> SessionRuntime | None:
        path = self.snapshot_path(session_id)
        if not path.exists():
            return None
        payload = json.loads(path.read_text())
        if payload.get("version") != SNAPSHOT_VERSION:
            raise ApiError(409, "snapshot_version", "unsupported session snapshot version")
        slide = self.slide_state(payload["slide_id"])
        session, policy = session_from_json(payload["corrector"], slide.grid, slide.records)
        if policy is None:
            policy = CorrectionPolicy(mode="naive")
        runtime = SessionRuntime(
            session_id=session_id,
            slide=slide,
            session=session,
            policy=policy,
            h_star=payload["h_star"],
            empty_t=bool(payload["empty_t"]),
            seed=int(payload["seed"]),
            history=list(payload["history"]),
        )
        _commit(runtime)
        self.register(runtime)
        return runtime


def _commit(runtime: SessionRuntime) -> None:
    """Publish the state GET endpoints serve; called under the lock."""
    session = runtime.session
    runtime.committed = {
        "pass_index": session.passes,
        "scores_q16": _quantize(session.heatmap),
        "hard_coded": sorted(session.hard_coded),
    }


def _gt_metrics(runtime: SessionRuntime) -> dict | None:
    if runtime.slide.truth is None:
        return None
    predicted = runtime.session.binary_labels().astype(bool)
    c = confusion(predicted, runtime.slide.truth)
    out = {}
    for name, value in wsi_metrics(c).as_dict().items():
        out[name] = None if math.isnan(value) else round(float(value), 6)
    out["confusion"] = {"tp": c.tp, "fp": c.fp, "tn": c.tn, "fn": c.fn}
    return out


def _parse_points(raw) -> Polyline:
    if not isinstance(raw, list) or len(raw) < 2:
        raise ApiError(422, "too_few_points", "a scribble needs at least 2 points")
    try:
        pts = np.array(raw, dtype=float)
    except (TypeError, ValueError):
        raise ApiError(422, "invalid_points", "points must be [x, y] number pairs")
    if pts.ndim != 2 or pts.shape[1] != 2 or not np.isfinite(pts).all():
        raise ApiError(422, "invalid_points", "points must be [x, y] number pairs")
    return Polyline(points=pts)


def _scribble_from_body(body: dict) -> Scribble:
    kind = body.get("kind")
    if kind not in (KIND_CORRECTIVE_FP, KIND_CORRECTIVE_FN):
        raise ApiError(
            422,
            "invalid_kind",
            f"kind must be {KIND_CORRECTIVE_FP!r} or {KIND_CORRECTIVE_FN!r}",
        )
    polyline = _parse_points(body.get("points"))
    label = CLASS_NON_TUMOR if kind == KIND_CORRECTIVE_FP else CLASS_TUMOR
    if polyline.arc_length <= 0:
        raise ApiError(422, "zero_length", "scribble has zero arc length")
    return Scribble(polyline=polyline, class_label=label, kind=kind)


async def _json_body(request: Request) -> dict:
    try:
        body = await request.json()
    except json.JSONDecodeError:
        raise ApiError(422, "invalid_body", "request body must be a JSON object")
    if not isinstance(body, dict):
        raise ApiError(422, "invalid_body", "request body must be a JSON object")
    return body


def create_app(data_root: str | Path | None = None) -> FastAPI:
    state = AppState(data_root)
    app = FastAPI(title="scribbleloop", docs_url=None, redoc_url=None)
    app.state.engine = state
    # browser clients are served as static files from another origin
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["GET", "POST"],
        allow_headers=["*"],
        expose_headers=["X-Full-Width", "X-Full-Height"],
    )

    @app.exception_handler(ApiError)
    async def on_api_error(_request: Request, exc: ApiError):
        return exc.response()

    @app.exception_handler(RequestValidationError)
    async def on_validation_error(_request: Request, exc: RequestValidationError):
        return ApiError(422, "invalid_body", str(exc)).response()

    @app.get("/slides")
    def list_slides():
        slides = []
        for entry in state.manifest.slides():
            slides.append(
                {
                    "slide_id": entry.slide_id,
                    "split": entry.split,
                    "size": entry.recipe.size,
                    "has_gt": (state.manifest.root / entry.tumor_mask).exists(),
                }
            )
        return {"slides": slides}

    @app.get("/slides/{slide_id}/image.png")
    def slide_preview(slide_id: str):
        entry = state.slide_entry(slide_id)
        with Image.open(state.manifest.root / entry.image) as img:
            img = img.convert("RGB")
            scale = max(img.width, img.height) / PREVIEW_MAX_SIDE
            if scale > 1:
                img = img.resize(
                    (round(img.width / scale), round(img.height / scale)), Image.BILINEAR
                )
            buf = io.BytesIO()
            img.save(buf, format="PNG")
        headers = {"X-Full-Width": str(entry.recipe.size), "X-Full-Height": str(entry.recipe.size)}
        return Response(content=buf.getvalue(), media_type="image/png", headers=headers)

    @app.post("/sessions", status_code=201)
    async def create_session(request: Request):
        body = await _json_body(request)
        slide_id = body.get("slide_id")
        if not isinstance(slide_id, str):
            raise ApiError(422, "invalid_body", "slide_id must be a string")
        mode = body.get("mode", "naive")
        if mode not in ("naive", "uncertainty"):
            raise ApiError(422, "invalid_mode", "mode must be 'naive' or 'uncertainty'")
        n_epoch_star = body.get("n_epoch_star", 30)
        seed = body.get("seed", 0)
        if not isinstance(n_epoch_star, int) or not isinstance(seed, int) or n_epoch_star < 1:
            raise ApiError(422, "invalid_body", "n_epoch_star and seed must be integers")

        slide = state.slide_state(slide_id)
        _model, threshold = state.model()
        try:
            session = init_session(
                slide.grid, slide.records, threshold.t_thresh, slide_id=slide_id, seed=seed
            )
        except DegenerateInputError as exc:
            raise ApiError(409, "empty_confident_set", str(exc))

        wsi = wsi_uncertainty(slide.records, threshold.t_thresh)
        calib = manifest_calibration(state.manifest)
        h_star = None
        if wsi.empty_t:
            h_star = 0.0
        elif calib is not None:
            h_star = normalize_h(wsi.h_wsi, calib)

        runtime = SessionRuntime(
            session_id=uuid.uuid4().hex,
            slide=slide,
            session=session,
            policy=CorrectionPolicy(mode=mode, n_epoch_star=n_epoch_star),
            h_star=h_star,
            empty_t=wsi.empty_t,
            seed=seed,
        )
        rough = {"pass_index": 0, "n_epoch": None, "elapsed_ms": None, "mode": None}
        metrics = _gt_metrics(runtime)
        if metrics is not None:
            rough["metrics"] = metrics
        runtime.history.append(rough)
        _commit(runtime)
        state.register(runtime)
        state.persist(runtime)
        return {
            "session_id": runtime.session_id,
            "slide_id": slide_id,
            "grid": _grid_header(slide.grid),
            "n_patches": len(slide.grid.patches),
            "t_thresh": threshold.t_thresh,
            "h_wsi": wsi.h_wsi,
            "h_star": h_star,
            "empty_t": wsi.empty_t,
            "has_gt": slide.has_gt,
            "policy": {
                "mode": mode,
                "n_epoch_star": n_epoch_star,
                "n_pass": runtime.policy.n_pass,
            },
        }

    @app.get("/sessions/{session_id}/heatmap")
    def get_heatmap(session_id: str):
        runtime = state.session(session_id)
        grid = runtime.slide.grid
        view = runtime.committed
        return {
            "session_id": session_id,
            "slide_id": runtime.slide.slide_id,
            "pass_index": view["pass_index"],
            "grid": _grid_header(grid),
            "cells": [[p.i, p.j] for p in grid.patches],
            "scores_q16": view["scores_q16"],
            "hard_coded": view["hard_coded"],
            "t_thresh": runtime.session.t_thresh,
        }

    @app.get("/sessions/{session_id}/uncertainty")
    def get_uncertainty(session_id: str):
        runtime = state.session(session_id)
        signed = signed_map(runtime.slide.records, runtime.session.t_thresh)
        wsi = wsi_uncertainty(runtime.slide.records, runtime.session.t_thresh)
        return {
            "session_id": session_id,
            "pass_index": runtime.committed["pass_index"],
            "h_wsi": wsi.h_wsi,
            "sigma_wsi": wsi.sigma_wsi,
            "h_star": runtime.h_star,
            "empty_t": runtime.empty_t,
            "signed": [round(float(v), 4) for v in signed],
        }

    @app.post("/sessions/{session_id}/scribbles", status_code=201)
    async def post_scribble(session_id: str, request: Request):
        runtime = state.session(session_id)
        body = await _json_body(request)
        scribble = _scribble_from_body(body)
        with runtime.lock:
            grid = runtime.slide.grid
            patches = patches_along_scribble(scribble, grid.spec, grid=grid)
            if not patches:
                raise ApiError(422, "no_patches", "scribble does not touch any tissue patch")
            label = 1 if scribble.kind == KIND_CORRECTIVE_FN else -1
            asserted = {pid: lab for item in runtime.pending for pid, lab in item["labels"].items()}
            for patch in patches:
                prior = asserted.get(patch.id)
                if prior is not None and prior != label:
                    raise ApiError(
                        409,
                        "contradictory_scribble",
                        f"patch {patch.id} already asserted with the opposite label this pass",
                    )
            runtime.pending.append(
                {
                    "scribble": scribble,
                    "labels": {p.id: label for p in patches},
                }
            )
            return {
                "session_id": session_id,
                "scribble_index": len(runtime.pending) - 1,
                "kind": scribble.kind,
                "patch_ids": [p.id for p in patches],
                "pending_count": len(runtime.pending),
            }

    @app.post("/sessions/{session_id}/passes")
    async def run_pass(session_id: str, request: Request):
        runtime = state.session(session_id)
        body = await _json_body(request)
        mode = body.get("mode", runtime.policy.mode)
        if mode not in ("naive", "uncertainty"):
            raise ApiError(422, "invalid_mode", "mode must be 'naive' or 'uncertainty'")
        with runtime.lock:
            if not runtime.pending:
                raise ApiError(
                    409, "no_pending_scribbles", "draw at least one scribble before running a pass"
                )
            warning = None
            h_star = runtime.h_star
            if mode == "uncertainty":
                if runtime.empty_t:
                    h_star = 0.0
                    warning = "empty confident tumor set; epoch count fell back to the minimum"
                elif h_star is None:
                    raise ApiError(
                        409, "no_calibration", "corpus has no uncertainty calibration bounds"
                    )
            policy = CorrectionPolicy(mode=mode, n_epoch_star=runtime.policy.n_epoch_star)
            scribbles = [item["scribble"] for item in runtime.pending]
            t0 = time.perf_counter()
            try:
                apply_correction(runtime.session, scribbles, policy, h_star=h_star)
            except ContradictoryScribbleError as exc:
                raise ApiError(409, "contradictory_scribble", str(exc))
            elapsed_ms = (time.perf_counter() - t0) * 1000.0
            runtime.pending.clear()
            entry = {
                "pass_index": runtime.session.passes,
                "n_epoch": policy.used[-1],
                "elapsed_ms": round(elapsed_ms, 3),
                "mode": mode,
            }
            metrics = _gt_metrics(runtime)
            if metrics is not None:
                entry["metrics"] = metrics
            if warning is not None:
                entry["warning"] = warning
            runtime.history.append(entry)
            _commit(runtime)
            state.persist(runtime)
            signed = signed_map(runtime.slide.records, runtime.session.t_thresh)
            response = {
                "session_id": session_id,
                "pass_index": runtime.session.passes,
                "n_epoch": policy.used[-1],
                "elapsed_ms": round(elapsed_ms, 3),
                "h_star": h_star,
                "scores_q16": runtime.committed["scores_q16"],
                "hard_coded": runtime.committed["hard_coded"],
                "signed": [round(float(v), 4) for v in signed],
            }
            if metrics is not None:
                response["metrics"] = metrics
            if warning is not None:
                response["warning"] = warning
            return response

    @app.get("/sessions/{session_id}/metrics")
    def get_metrics(session_id: str):
        runtime = state.session(session_id)
        return {
            "session_id": session_id,
            "slide_id": runtime.slide.slide_id,
            "has_gt": runtime.slide.has_gt,
            "pass_index": runtime.committed["pass_index"],
            "pending_count": len(runtime.pending),
            "history": runtime.history,
        }

    return app

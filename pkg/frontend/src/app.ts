/**
 * DOM shell wiring the correction workflow to the service API.
 *
 * All rendering state lives in one ViewState record plus the cached
 * overlay payloads; every user action funnels through a state
 * transition followed by a redraw. Overlay payloads refresh only from
 * session creation, pass responses, and page-reload reconstruction,
 * so toggling overlay modes never touches the network.
 */

import { ApiClient, ApiError } from "./api.js";
import { fetchSessionSnapshot } from "./bootstrap.js";
import { chartPoints, DEFAULT_LAYOUT } from "./chart.js";
import { FN_WARNING, FP_WARNING, cssColor } from "./colormap.js";
import {
  cellRect,
  composeScene,
  type OutlineRect,
  type OverlayMode,
  type ScenePayloads,
} from "./overlay.js";
import { decimateTrace, isDrawable, type Point } from "./scribble.js";
import {
  TOOL_KIND,
  beginPass,
  canRunPass,
  completePass,
  failPass,
  initialState,
  selectTool,
  setOverlayMode,
  setOverlayOpacity,
  stageScribble,
  type Tool,
  type ViewState,
} from "./state.js";
import type { HistoryEntry } from "./types.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

const params = new URLSearchParams(window.location.search);
const api = new ApiClient(params.get("api") ?? "http://127.0.0.1:8000");

let state: ViewState = initialState();
const payloads: ScenePayloads = { heatmap: null, uncertainty: null };
let sessionMode = "uncertainty";
let fullW = 0;
let fullH = 0;
// rects of patches staged this pass, drawn in the staging tool's color
let stagedRects: Array<{ rect: OutlineRect; tool: Tool }> = [];
let liveTrace: Point[] = [];

const stageWrap = el<HTMLDivElement>("stage-wrap");
const stage = el<HTMLDivElement>("stage");
const preview = el<HTMLImageElement>("preview");
const overlayLayer = el<HTMLCanvasElement>("overlay-layer");
const scribbleLayer = el<HTMLCanvasElement>("scribble-layer");
const banner = el<HTMLDivElement>("banner");
const toastBox = el<HTMLDivElement>("toast");
const slideSelect = el<HTMLSelectElement>("slide-select");
const modeSelect = el<HTMLSelectElement>("mode-select");
const runPassBtn = el<HTMLButtonElement>("run-pass");
const pendingLabel = el<HTMLDivElement>("pending-label");
const sessionLabel = el<HTMLSpanElement>("session-label");
const sessionStats = el<HTMLDivElement>("session-stats");
const chartCanvas = el<HTMLCanvasElement>("chart");
const historyBody = el<HTMLTableElement>("history-table").querySelector("tbody")!;

const view = { scale: 1, tx: 0, ty: 0 };

let toastTimer: number | undefined;
function toast(message: string): void {
  toastBox.textContent = message;
  toastBox.classList.add("visible");
  window.clearTimeout(toastTimer);
  toastTimer = window.setTimeout(() => toastBox.classList.remove("visible"), 3500);
}

function showBanner(message: string | null): void {
  banner.textContent = message ?? "";
  banner.classList.toggle("visible", message !== null);
}

function applyTransform(): void {
  stage.style.transform = `translate(${view.tx}px, ${view.ty}px) scale(${view.scale})`;
}

function fitView(): void {
  if (fullW === 0) {
    return;
  }
  const w = stageWrap.clientWidth;
  const h = stageWrap.clientHeight;
  view.scale = Math.min(w / fullW, h / fullH);
  view.tx = (w - fullW * view.scale) / 2;
  view.ty = (h - fullH * view.scale) / 2;
  applyTransform();
}

function setupStage(shape: [number, number], slideId: string): void {
  fullH = shape[0];
  fullW = shape[1];
  stage.style.width = `${fullW}px`;
  stage.style.height = `${fullH}px`;
  preview.src = api.previewUrl(slideId);
  preview.width = fullW;
  preview.height = fullH;
  for (const canvas of [overlayLayer, scribbleLayer]) {
    canvas.width = fullW;
    canvas.height = fullH;
  }
  fitView();
}

/** Pointer event position in full-resolution image coordinates. */
function imagePoint(event: PointerEvent): Point {
  const rect = scribbleLayer.getBoundingClientRect();
  return [
    ((event.clientX - rect.left) / rect.width) * fullW,
    ((event.clientY - rect.top) / rect.height) * fullH,
  ];
}

function drawOverlay(): void {
  const ctx = overlayLayer.getContext("2d");
  if (ctx === null) {
    return;
  }
  ctx.clearRect(0, 0, fullW, fullH);
  const scene = composeScene(state.overlayMode, payloads);
  showBanner(scene.error);
  const grid = payloads.heatmap?.grid;
  if (scene.image !== null && grid !== undefined) {
    const off = document.createElement("canvas");
    off.width = scene.image.width;
    off.height = scene.image.height;
    const offCtx = off.getContext("2d")!;
    const pixels = offCtx.createImageData(scene.image.width, scene.image.height);
    pixels.data.set(scene.image.data);
    offCtx.putImageData(pixels, 0, 0);
    // tile cells at the grid stride, centered on the patch centers
    const stride = grid.patch_size * (1 - grid.overlap);
    const margin = (grid.patch_size - stride) / 2;
    ctx.imageSmoothingEnabled = false;
    ctx.globalAlpha = state.overlayOpacity;
    ctx.drawImage(off, margin, margin, grid.cols * stride, grid.rows * stride);
    ctx.globalAlpha = 1;
  }
  // hard-coded patches stay outlined in every overlay mode
  ctx.strokeStyle = "#ffd34d";
  ctx.lineWidth = 2;
  for (const r of scene.outlines) {
    ctx.strokeRect(r.x, r.y, r.w, r.h);
  }
}

function drawScribbleLayer(): void {
  const ctx = scribbleLayer.getContext("2d");
  if (ctx === null) {
    return;
  }
  ctx.clearRect(0, 0, fullW, fullH);
  ctx.setLineDash([6, 4]);
  for (const staged of stagedRects) {
    ctx.strokeStyle = cssColor(staged.tool === "fp" ? FP_WARNING : FN_WARNING);
    ctx.lineWidth = 2;
    ctx.strokeRect(staged.rect.x, staged.rect.y, staged.rect.w, staged.rect.h);
  }
  ctx.setLineDash([]);
  if (liveTrace.length >= 2) {
    ctx.strokeStyle = cssColor(state.tool === "fp" ? FP_WARNING : FN_WARNING);
    ctx.lineWidth = Math.max(2, 3 / view.scale);
    ctx.lineJoin = "round";
    ctx.beginPath();
    ctx.moveTo(liveTrace[0][0], liveTrace[0][1]);
    for (const [x, y] of liveTrace.slice(1)) {
      ctx.lineTo(x, y);
    }
    ctx.stroke();
  }
}

function renderChart(): void {
  const ctx = chartCanvas.getContext("2d");
  if (ctx === null) {
    return;
  }
  const { width, height, pad } = DEFAULT_LAYOUT;
  ctx.clearRect(0, 0, width, height);
  ctx.strokeStyle = "#c9c9cf";
  ctx.lineWidth = 1;
  ctx.strokeRect(pad, pad, width - 2 * pad, height - 2 * pad);
  const points = chartPoints(state.history);
  if (points.length === 0) {
    return;
  }
  ctx.strokeStyle = "#2a5db0";
  ctx.lineWidth = 2;
  ctx.beginPath();
  ctx.moveTo(points[0].x, points[0].y);
  for (const p of points.slice(1)) {
    ctx.lineTo(p.x, p.y);
  }
  ctx.stroke();
  ctx.fillStyle = "#2a5db0";
  for (const p of points) {
    ctx.beginPath();
    ctx.arc(p.x, p.y, 3, 0, 2 * Math.PI);
    ctx.fill();
  }
}

function renderHistory(): void {
  historyBody.textContent = "";
  for (const entry of state.history) {
    const row = document.createElement("tr");
    const f1 = entry.metrics ? entry.metrics.f1.toFixed(3) : "-";
    const cells = [
      String(entry.pass_index),
      entry.n_epoch === null ? "-" : String(entry.n_epoch),
      entry.elapsed_ms === null ? "-" : entry.elapsed_ms.toFixed(0),
      f1,
    ];
    for (const [k, text] of cells.entries()) {
      const td = document.createElement("td");
      td.textContent = text;
      if (k === 0) {
        row.appendChild(td);
        continue;
      }
      row.appendChild(td);
    }
    historyBody.appendChild(row);
  }
}

function renderStats(): void {
  if (state.sessionId === null) {
    sessionStats.textContent = "open a session to begin";
    return;
  }
  const heat = payloads.heatmap;
  const unc = payloads.uncertainty;
  const lines = [
    `slide ${state.slideId}`,
    `patches ${heat ? heat.cells.length : "?"}`,
    `t_thresh ${heat ? heat.t_thresh.toFixed(3) : "?"}`,
    `H_WSI ${unc ? unc.h_wsi.toFixed(4) : "?"}`,
    `h* ${unc ? unc.h_star.toFixed(3) : "?"}${unc?.empty_t ? " (no confident tumor)" : ""}`,
    `mode ${sessionMode}`,
  ];
  sessionStats.textContent = lines.join("\n");
}

function updateControls(): void {
  runPassBtn.disabled = !canRunPass(state);
  runPassBtn.textContent = state.passInFlight ? "running..." : "run pass";
  pendingLabel.textContent = `${state.pendingCount} pending scribble${state.pendingCount === 1 ? "" : "s"}`;
  el<HTMLButtonElement>("tool-fp").classList.toggle("active", state.tool === "fp");
  el<HTMLButtonElement>("tool-fn").classList.toggle("active", state.tool === "fn");
  for (const mode of ["heatmap", "signed", "none"] as const) {
    el<HTMLButtonElement>(`overlay-${mode}`).classList.toggle(
      "active",
      state.overlayMode === mode,
    );
  }
  sessionLabel.textContent = state.sessionId
    ? `session ${state.sessionId.slice(0, 8)} on ${state.slideId} (pass ${payloads.heatmap?.pass_index ?? 0})`
    : "no session";
}

function renderAll(): void {
  drawOverlay();
  drawScribbleLayer();
  renderChart();
  renderHistory();
  renderStats();
  updateControls();
}

function rememberStagedPatches(patchIds: number[], tool: Tool): void {
  const heat = payloads.heatmap;
  if (heat === null) {
    return;
  }
  for (const id of patchIds) {
    if (id >= 0 && id < heat.cells.length) {
      const [i, j] = heat.cells[id];
      stagedRects.push({ rect: cellRect(heat.grid, i, j), tool });
    }
  }
}

async function adoptSession(sessionId: string, mode: string | null): Promise<void> {
  const snapshot = await fetchSessionSnapshot(api, sessionId);
  payloads.heatmap = snapshot.heatmap;
  payloads.uncertainty = snapshot.uncertainty;
  state = {
    ...state,
    slideId: snapshot.metrics.slide_id,
    sessionId,
    pendingCount: snapshot.metrics.pending_count,
    stagedPatchIds: [],
    history: snapshot.metrics.history,
    passInFlight: false,
  };
  stagedRects = [];
  liveTrace = [];
  if (mode !== null) {
    sessionMode = mode;
  }
  window.location.hash = `session=${sessionId}`;
  setupStage(snapshot.heatmap.grid.shape, snapshot.metrics.slide_id);
  slideSelect.value = snapshot.metrics.slide_id;
  renderAll();
}

async function openSession(): Promise<void> {
  const slideId = slideSelect.value;
  if (slideId === "") {
    toast("no slide selected");
    return;
  }
  try {
    const session = await api.createSession({
      slide_id: slideId,
      mode: modeSelect.value,
    });
    await adoptSession(session.session_id, modeSelect.value);
    toast(`session opened on ${slideId}`);
  } catch (err) {
    if (err instanceof ApiError) {
      toast(`${err.code}: ${err.message}`);
      return;
    }
    throw err;
  }
}

async function finishScribble(): Promise<void> {
  const points = decimateTrace(liveTrace);
  liveTrace = [];
  drawScribbleLayer();
  if (!isDrawable(points)) {
    toast("scribble too short, draw a stroke");
    return;
  }
  if (state.sessionId === null) {
    return;
  }
  const tool = state.tool;
  try {
    const resp = await api.stageScribble(state.sessionId, TOOL_KIND[tool], points);
    state = stageScribble(state, resp);
    rememberStagedPatches(resp.patch_ids, tool);
    drawScribbleLayer();
    updateControls();
    toast(`staged ${resp.patch_ids.length} patches as ${tool === "fp" ? "not tumor" : "tumor"}`);
  } catch (err) {
    if (err instanceof ApiError) {
      toast(`${err.code}: ${err.message}`);
      return;
    }
    throw err;
  }
}

async function runPass(): Promise<void> {
  const sessionId = state.sessionId;
  if (!canRunPass(state) || sessionId === null) {
    return;
  }
  state = beginPass(state);
  updateControls();
  try {
    const resp = await api.runPass(sessionId);
    const heat = payloads.heatmap;
    const unc = payloads.uncertainty;
    if (heat !== null) {
      heat.scores_q16 = resp.scores_q16;
      heat.hard_coded = resp.hard_coded;
      heat.pass_index = resp.pass_index;
    }
    if (unc !== null) {
      unc.signed = resp.signed;
      unc.pass_index = resp.pass_index;
      unc.h_star = resp.h_star;
    }
    const entry: HistoryEntry = {
      pass_index: resp.pass_index,
      n_epoch: resp.n_epoch,
      elapsed_ms: resp.elapsed_ms,
      mode: sessionMode,
      metrics: resp.metrics,
    };
    state = completePass(state, entry);
    stagedRects = [];
    renderAll();
    toast(`pass ${resp.pass_index}: ${resp.n_epoch} epochs in ${resp.elapsed_ms.toFixed(0)} ms`);
    if (resp.warning) {
      toast(resp.warning);
    }
  } catch (err) {
    state = failPass(state);
    if (err instanceof ApiError) {
      if (err.code === "no_pending_scribbles") {
        state = { ...state, pendingCount: 0 };
      }
      toast(`${err.code}: ${err.message}`);
      updateControls();
      return;
    }
    updateControls();
    throw err;
  }
}

function bindPointerEvents(): void {
  let panning = false;
  let panStart = { x: 0, y: 0, tx: 0, ty: 0 };
  let drawing = false;

  scribbleLayer.addEventListener("pointerdown", (e) => {
    if (e.shiftKey || e.button === 1) {
      panning = true;
      panStart = { x: e.clientX, y: e.clientY, tx: view.tx, ty: view.ty };
      scribbleLayer.setPointerCapture(e.pointerId);
      return;
    }
    if (e.button !== 0 || state.sessionId === null) {
      return;
    }
    drawing = true;
    liveTrace = [imagePoint(e)];
    scribbleLayer.setPointerCapture(e.pointerId);
  });

  scribbleLayer.addEventListener("pointermove", (e) => {
    if (panning) {
      view.tx = panStart.tx + (e.clientX - panStart.x);
      view.ty = panStart.ty + (e.clientY - panStart.y);
      applyTransform();
      return;
    }
    if (drawing) {
      liveTrace.push(imagePoint(e));
      drawScribbleLayer();
    }
  });

  scribbleLayer.addEventListener("pointerup", (e) => {
    if (panning) {
      panning = false;
      return;
    }
    if (drawing) {
      drawing = false;
      liveTrace.push(imagePoint(e));
      void finishScribble();
    }
  });

  stageWrap.addEventListener(
    "wheel",
    (e) => {
      if (fullW === 0) {
        return;
      }
      e.preventDefault();
      const factor = Math.exp(-e.deltaY * 0.0015);
      const next = Math.min(12, Math.max(0.02, view.scale * factor));
      const applied = next / view.scale;
      const rect = stageWrap.getBoundingClientRect();
      const px = e.clientX - rect.left;
      const py = e.clientY - rect.top;
      view.tx = px - (px - view.tx) * applied;
      view.ty = py - (py - view.ty) * applied;
      view.scale = next;
      applyTransform();
    },
    { passive: false },
  );
}

function bindControls(): void {
  el<HTMLButtonElement>("open-session").addEventListener("click", () => void openSession());
  runPassBtn.addEventListener("click", () => void runPass());
  el<HTMLButtonElement>("tool-fp").addEventListener("click", () => {
    state = selectTool(state, "fp");
    updateControls();
  });
  el<HTMLButtonElement>("tool-fn").addEventListener("click", () => {
    state = selectTool(state, "fn");
    updateControls();
  });
  for (const mode of ["heatmap", "signed", "none"] as const) {
    el<HTMLButtonElement>(`overlay-${mode}`).addEventListener("click", () => {
      state = setOverlayMode(state, mode as OverlayMode);
      drawOverlay();
      updateControls();
    });
  }
  el<HTMLInputElement>("opacity").addEventListener("input", (e) => {
    const value = Number((e.target as HTMLInputElement).value) / 100;
    state = setOverlayOpacity(state, value);
    drawOverlay();
  });
  el<HTMLButtonElement>("reset-view").addEventListener("click", fitView);
  window.addEventListener("resize", fitView);
}

async function start(): Promise<void> {
  bindControls();
  bindPointerEvents();
  try {
    const listing = await api.listSlides();
    for (const slide of listing.slides) {
      const option = document.createElement("option");
      option.value = slide.slide_id;
      option.textContent = `${slide.slide_id} (${slide.split}${slide.has_gt ? "" : ", no gt"})`;
      slideSelect.appendChild(option);
    }
  } catch {
    showBanner(`cannot reach the service at ${api.baseUrl}; pass ?api=<url> if it runs elsewhere`);
    return;
  }
  const match = window.location.hash.match(/session=([0-9a-f]+)/);
  if (match !== null) {
    try {
      await adoptSession(match[1], null);
      toast("session restored");
    } catch (err) {
      if (err instanceof ApiError) {
        toast(`${err.code}: ${err.message}`);
        window.location.hash = "";
        return;
      }
      throw err;
    }
  }
  updateControls();
}

void start();

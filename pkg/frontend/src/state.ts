/**
 * View state and its transitions.
 *
 * The state is an immutable record updated by pure functions, which
 * keeps the invariants testable: exactly one scribble tool is active
 * at a time, the pending count mirrors the server's, and a successful
 * pass clears the pending set. The DOM layer only reads this record
 * and re-renders.
 */

import type { OverlayMode } from "./overlay.js";
import type {
  HistoryEntry,
  ScribbleKind,
  ScribbleResponse,
  SessionResponse,
} from "./types.js";

export type Tool = "fp" | "fn";

export const TOOL_KIND: Record<Tool, ScribbleKind> = {
  fp: "corrective_fp",
  fn: "corrective_fn",
};

export interface ViewState {
  slideId: string | null;
  sessionId: string | null;
  overlayMode: OverlayMode;
  overlayOpacity: number;
  tool: Tool;
  pendingCount: number;
  stagedPatchIds: number[];
  history: HistoryEntry[];
  passInFlight: boolean;
}

export function initialState(): ViewState {
  return {
    slideId: null,
    sessionId: null,
    overlayMode: "heatmap",
    overlayOpacity: 0.65,
    tool: "fp",
    pendingCount: 0,
    stagedPatchIds: [],
    history: [],
    passInFlight: false,
  };
}

export function withSession(
  state: ViewState,
  session: SessionResponse,
  history: HistoryEntry[],
): ViewState {
  return {
    ...state,
    slideId: session.slide_id,
    sessionId: session.session_id,
    pendingCount: 0,
    stagedPatchIds: [],
    history,
    passInFlight: false,
  };
}

export function selectTool(state: ViewState, tool: Tool): ViewState {
  return { ...state, tool };
}

export function setOverlayMode(state: ViewState, mode: OverlayMode): ViewState {
  return { ...state, overlayMode: mode };
}

export function setOverlayOpacity(state: ViewState, opacity: number): ViewState {
  return { ...state, overlayOpacity: Math.min(1, Math.max(0, opacity)) };
}

/** Records a staged scribble; the server's pending count is authoritative. */
export function stageScribble(state: ViewState, resp: ScribbleResponse): ViewState {
  return {
    ...state,
    pendingCount: resp.pending_count,
    stagedPatchIds: [...state.stagedPatchIds, ...resp.patch_ids],
  };
}

export function beginPass(state: ViewState): ViewState {
  return { ...state, passInFlight: true };
}

/** A completed pass clears the staged set and extends the history. */
export function completePass(state: ViewState, entry: HistoryEntry): ViewState {
  return {
    ...state,
    pendingCount: 0,
    stagedPatchIds: [],
    history: [...state.history, entry],
    passInFlight: false,
  };
}

/** A failed pass keeps the staged scribbles for a retry. */
export function failPass(state: ViewState): ViewState {
  return { ...state, passInFlight: false };
}

/**
 * The pass trigger stays disabled unless something is staged and no
 * pass is in flight, so an empty staged set can never produce a 409.
 */
export function canRunPass(state: ViewState): boolean {
  return state.sessionId !== null && state.pendingCount > 0 && !state.passInFlight;
}

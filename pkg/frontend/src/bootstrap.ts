/**
 * Session reconstruction after a page reload.
 *
 * Everything the view needs is recoverable from GET endpoints alone:
 * the heatmap payload, the signed uncertainty payload, and the metric
 * history. No POST is issued and nothing is recomputed client-side.
 */

import type { ApiClient } from "./api.js";
import type { ScenePayloads } from "./overlay.js";
import { initialState, type ViewState } from "./state.js";
import type {
  HeatmapResponse,
  MetricsResponse,
  UncertaintyResponse,
} from "./types.js";

export interface RestoredSession {
  state: ViewState;
  payloads: ScenePayloads;
}

export interface SessionSnapshot {
  heatmap: HeatmapResponse;
  uncertainty: UncertaintyResponse;
  metrics: MetricsResponse;
}

export async function fetchSessionSnapshot(
  api: ApiClient,
  sessionId: string,
): Promise<SessionSnapshot> {
  const [heatmap, uncertainty, metrics] = await Promise.all([
    api.heatmap(sessionId),
    api.uncertainty(sessionId),
    api.metrics(sessionId),
  ]);
  return { heatmap, uncertainty, metrics };
}

export function restoreFromSnapshot(snapshot: SessionSnapshot): RestoredSession {
  const state: ViewState = {
    ...initialState(),
    slideId: snapshot.metrics.slide_id,
    sessionId: snapshot.metrics.session_id,
    pendingCount: snapshot.metrics.pending_count,
    history: snapshot.metrics.history,
  };
  return {
    state,
    payloads: { heatmap: snapshot.heatmap, uncertainty: snapshot.uncertainty },
  };
}

/** Reconstructs view state and overlay payloads for an existing session. */
export async function restoreSession(
  api: ApiClient,
  sessionId: string,
): Promise<RestoredSession> {
  return restoreFromSnapshot(await fetchSessionSnapshot(api, sessionId));
}

/**
 * Typed client for the correction service.
 *
 * Every method maps to one endpoint and returns the parsed JSON body.
 * Non-2xx responses are surfaced as ApiError carrying the service's
 * error code, so callers can branch on codes like "too_few_points"
 * without string-matching messages.
 */

import type {
  HeatmapResponse,
  MetricsResponse,
  PassResponse,
  ScribbleKind,
  ScribbleResponse,
  SessionResponse,
  SlidesResponse,
  UncertaintyResponse,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export interface CreateSessionRequest {
  slide_id: string;
  mode?: string;
  n_epoch_star?: number;
  seed?: number;
}

export class ApiClient {
  private readonly fetchFn: FetchLike;

  constructor(
    readonly baseUrl: string,
    fetchFn?: FetchLike,
  ) {
    this.fetchFn = fetchFn ?? ((input, init) => fetch(input, init));
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(this.baseUrl + path, init);
    let body: unknown = null;
    try {
      body = await resp.json();
    } catch {
      body = null;
    }
    if (!resp.ok) {
      const envelope = body as { error?: { code?: string; message?: string } } | null;
      throw new ApiError(
        resp.status,
        envelope?.error?.code ?? `http_${resp.status}`,
        envelope?.error?.message ?? `request to ${path} failed`,
      );
    }
    return body as T;
  }

  private post<T>(path: string, payload: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
  }

  listSlides(): Promise<SlidesResponse> {
    return this.request("/slides");
  }

  previewUrl(slideId: string): string {
    return `${this.baseUrl}/slides/${slideId}/image.png`;
  }

  createSession(req: CreateSessionRequest): Promise<SessionResponse> {
    return this.post("/sessions", req);
  }

  heatmap(sessionId: string): Promise<HeatmapResponse> {
    return this.request(`/sessions/${sessionId}/heatmap`);
  }

  uncertainty(sessionId: string): Promise<UncertaintyResponse> {
    return this.request(`/sessions/${sessionId}/uncertainty`);
  }

  stageScribble(
    sessionId: string,
    kind: ScribbleKind,
    points: Array<[number, number]>,
  ): Promise<ScribbleResponse> {
    return this.post(`/sessions/${sessionId}/scribbles`, { kind, points });
  }

  runPass(sessionId: string, mode?: string): Promise<PassResponse> {
    return this.post(`/sessions/${sessionId}/passes`, mode ? { mode } : {});
  }

  metrics(sessionId: string): Promise<MetricsResponse> {
    return this.request(`/sessions/${sessionId}/metrics`);
  }
}

/**
 * Wire types for the correction service API.
 *
 * Field names mirror the JSON payloads exactly; see API.md in the
 * repository root for the endpoint reference.
 */

export interface GridHeader {
  rows: number;
  cols: number;
  patch_size: number;
  overlap: number;
  shape: [number, number];
}

export interface SlideInfo {
  slide_id: string;
  split: string;
  size: number;
  has_gt: boolean;
}

export interface SlidesResponse {
  slides: SlideInfo[];
}

export interface SessionPolicy {
  mode: string;
  n_epoch_star: number;
  n_pass: number;
}

export interface SessionResponse {
  session_id: string;
  slide_id: string;
  grid: GridHeader;
  n_patches: number;
  t_thresh: number;
  h_wsi: number;
  h_star: number;
  empty_t: boolean;
  has_gt: boolean;
  policy: SessionPolicy;
}

export interface HeatmapResponse {
  session_id: string;
  slide_id: string;
  pass_index: number;
  grid: GridHeader;
  cells: [number, number][];
  scores_q16: number[];
  hard_coded: number[];
  t_thresh: number;
}

export interface UncertaintyResponse {
  session_id: string;
  pass_index: number;
  h_wsi: number;
  sigma_wsi: number;
  h_star: number;
  empty_t: boolean;
  signed: number[];
}

export type ScribbleKind = "corrective_fp" | "corrective_fn";

export interface ScribbleResponse {
  session_id: string;
  scribble_index: number;
  kind: ScribbleKind;
  patch_ids: number[];
  pending_count: number;
}

export interface Confusion {
  tp: number;
  fp: number;
  tn: number;
  fn: number;
}

export interface SlideMetrics {
  balanced_accuracy: number;
  precision: number;
  recall: number;
  f1: number;
  confusion: Confusion;
}

export interface PassResponse {
  session_id: string;
  pass_index: number;
  n_epoch: number;
  elapsed_ms: number;
  h_star: number;
  scores_q16: number[];
  hard_coded: number[];
  signed: number[];
  metrics?: SlideMetrics;
  warning?: string;
}

export interface HistoryEntry {
  pass_index: number;
  n_epoch: number | null;
  elapsed_ms: number | null;
  mode: string | null;
  metrics?: SlideMetrics;
}

export interface MetricsResponse {
  session_id: string;
  slide_id: string;
  has_gt: boolean;
  pass_index: number;
  pending_count: number;
  history: HistoryEntry[];
}

export interface ApiErrorBody {
  error: {
    code: string;
    message: string;
  };
}

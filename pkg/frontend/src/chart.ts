/**
 * Geometry for the pass-history chart.
 *
 * Pure coordinate math: history entries in, pixel-space polyline out.
 * Entry 0 (the rough model before any correction) is always part of
 * the series when the slide has ground truth.
 */

import type { HistoryEntry } from "./types.js";

export interface ChartPoint {
  x: number;
  y: number;
  passIndex: number;
  f1: number;
}

export interface ChartLayout {
  width: number;
  height: number;
  pad: number;
}

export const DEFAULT_LAYOUT: ChartLayout = { width: 320, height: 160, pad: 22 };

/** Per-pass f1 values, one point per history entry that carries metrics. */
export function f1Series(history: HistoryEntry[]): Array<{ passIndex: number; f1: number }> {
  const series: Array<{ passIndex: number; f1: number }> = [];
  for (const entry of history) {
    if (entry.metrics) {
      series.push({ passIndex: entry.pass_index, f1: entry.metrics.f1 });
    }
  }
  return series;
}

/**
 * Maps the f1 series into pixel space. The x axis spans the observed
 * pass indices (at least one unit wide), the y axis spans [0, 1] with
 * f1 = 1 at the top.
 */
export function chartPoints(
  history: HistoryEntry[],
  layout: ChartLayout = DEFAULT_LAYOUT,
): ChartPoint[] {
  const series = f1Series(history);
  if (series.length === 0) {
    return [];
  }
  const maxPass = Math.max(1, ...series.map((p) => p.passIndex));
  const innerW = layout.width - 2 * layout.pad;
  const innerH = layout.height - 2 * layout.pad;
  return series.map((p) => ({
    x: layout.pad + (p.passIndex / maxPass) * innerW,
    y: layout.pad + (1 - p.f1) * innerH,
    passIndex: p.passIndex,
    f1: p.f1,
  }));
}

/**
 * Pointer-trace handling for scribble capture.
 *
 * Raw pointermove samples arrive much denser than the service needs,
 * so traces are decimated to a minimum spacing before posting. A bare
 * click produces fewer than two points after decimation and is
 * rejected locally, never sent.
 */

export type Point = [number, number];

export const MIN_SPACING_PX = 2;

/**
 * Thins a pointer trace so consecutive kept points are at least
 * `minSpacing` pixels apart. The first sample is always kept; later
 * samples are kept only once they clear the spacing from the last
 * kept point, so the result never contains near-duplicates.
 */
export function decimateTrace(trace: Point[], minSpacing = MIN_SPACING_PX): Point[] {
  if (trace.length === 0) {
    return [];
  }
  const kept: Point[] = [trace[0]];
  for (let k = 1; k < trace.length; k++) {
    const last = kept[kept.length - 1];
    const dx = trace[k][0] - last[0];
    const dy = trace[k][1] - last[1];
    if (Math.hypot(dx, dy) >= minSpacing) {
      kept.push(trace[k]);
    }
  }
  return kept;
}

/** A polyline must keep at least two points to be worth posting. */
export function isDrawable(points: Point[]): boolean {
  return points.length >= 2;
}

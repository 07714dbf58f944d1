/**
 * Overlay rendering, kept free of canvas APIs so it can run anywhere.
 *
 * Payloads are rendered into a rows-by-cols RGBA buffer with one pixel
 * per grid cell; the DOM layer scales that buffer onto the slide with
 * image smoothing disabled. Cells absent from the payload (non-tissue)
 * stay fully transparent. Hard-coded patches are reported as outline
 * rectangles in image pixel coordinates and are drawn in every overlay
 * mode, including "none".
 */

import { divergingColor, heatColor } from "./colormap.js";
import type { GridHeader, HeatmapResponse, UncertaintyResponse } from "./types.js";

export interface CellImage {
  width: number;
  height: number;
  data: Uint8ClampedArray;
}

export interface OutlineRect {
  x: number;
  y: number;
  w: number;
  h: number;
}

export type OverlayMode = "heatmap" | "signed" | "none";

export interface ScenePayloads {
  heatmap: HeatmapResponse | null;
  uncertainty: UncertaintyResponse | null;
}

export interface Scene {
  image: CellImage | null;
  outlines: OutlineRect[];
  error: string | null;
}

export const Q16_MAX = 65535;

/** Stride between patch origins in image pixels. */
export function gridStride(grid: GridHeader): number {
  return grid.patch_size * (1 - grid.overlap);
}

/**
 * Checks that a value array lines up with the payload's cell list and
 * that every cell fits the grid. Returns a human-readable problem
 * description, or null when aligned.
 */
export function alignmentError(
  grid: GridHeader,
  cells: Array<[number, number]>,
  values: ArrayLike<number>,
  name: string,
): string | null {
  if (values.length !== cells.length) {
    return `${name} carries ${values.length} values for ${cells.length} cells`;
  }
  for (let k = 0; k < cells.length; k++) {
    const [i, j] = cells[k];
    if (i < 0 || i >= grid.rows || j < 0 || j >= grid.cols) {
      return `cell ${k} at (${i}, ${j}) falls outside the ${grid.rows}x${grid.cols} grid`;
    }
  }
  return null;
}

function blankImage(grid: GridHeader): CellImage {
  return {
    width: grid.cols,
    height: grid.rows,
    data: new Uint8ClampedArray(grid.cols * grid.rows * 4),
  };
}

function paintCell(
  img: CellImage,
  i: number,
  j: number,
  color: [number, number, number],
): void {
  const at = (i * img.width + j) * 4;
  img.data[at] = color[0];
  img.data[at + 1] = color[1];
  img.data[at + 2] = color[2];
  img.data[at + 3] = 255;
}

/** Heatmap scores on the continuous [0, 1] colormap. */
export function heatmapImage(
  grid: GridHeader,
  cells: Array<[number, number]>,
  scoresQ16: number[],
): CellImage {
  const img = blankImage(grid);
  for (let k = 0; k < cells.length; k++) {
    paintCell(img, cells[k][0], cells[k][1], heatColor(scoresQ16[k] / Q16_MAX));
  }
  return img;
}

/** Signed uncertainty on the diverging [-1, 1] colormap. */
export function signedImage(
  grid: GridHeader,
  cells: Array<[number, number]>,
  signed: number[],
): CellImage {
  const img = blankImage(grid);
  for (let k = 0; k < cells.length; k++) {
    paintCell(img, cells[k][0], cells[k][1], divergingColor(signed[k]));
  }
  return img;
}

/** Image-pixel rectangle covered by the patch at grid cell (i, j). */
export function cellRect(grid: GridHeader, i: number, j: number): OutlineRect {
  const stride = gridStride(grid);
  return { x: j * stride, y: i * stride, w: grid.patch_size, h: grid.patch_size };
}

/** Outline rectangles for hard-coded patches, by payload index. */
export function outlineRects(
  grid: GridHeader,
  cells: Array<[number, number]>,
  hardCoded: number[],
): OutlineRect[] {
  const rects: OutlineRect[] = [];
  for (const id of hardCoded) {
    if (id >= 0 && id < cells.length) {
      rects.push(cellRect(grid, cells[id][0], cells[id][1]));
    }
  }
  return rects;
}

/**
 * Builds the full overlay scene for one mode from cached payloads.
 * Alignment problems surface in `error` and suppress the image; the
 * outlines come from the heatmap payload whatever the mode is.
 */
export function composeScene(mode: OverlayMode, payloads: ScenePayloads): Scene {
  const heat = payloads.heatmap;
  if (heat === null) {
    return { image: null, outlines: [], error: null };
  }
  const heatProblem = alignmentError(heat.grid, heat.cells, heat.scores_q16, "heatmap");
  if (heatProblem !== null) {
    return { image: null, outlines: [], error: heatProblem };
  }
  const outlines = outlineRects(heat.grid, heat.cells, heat.hard_coded);
  if (mode === "none") {
    return { image: null, outlines, error: null };
  }
  if (mode === "heatmap") {
    return { image: heatmapImage(heat.grid, heat.cells, heat.scores_q16), outlines, error: null };
  }
  const unc = payloads.uncertainty;
  if (unc === null) {
    return { image: null, outlines, error: null };
  }
  const signedProblem = alignmentError(heat.grid, heat.cells, unc.signed, "signed map");
  if (signedProblem !== null) {
    return { image: null, outlines, error: signedProblem };
  }
  return { image: signedImage(heat.grid, heat.cells, unc.signed), outlines, error: null };
}

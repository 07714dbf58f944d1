/**
 * Colormaps for the two overlay payloads.
 *
 * The heatmap uses a continuous cold-to-hot ramp over [0, 1]. The
 * signed uncertainty map uses a diverging map over [-1, 1] whose two
 * arms are symmetric around a neutral gray; only an exact 0 renders
 * neutral, any nonzero value carries a visible tint toward its side so
 * the sign is readable even at small magnitudes.
 */

export type Rgb = [number, number, number];

// heatmap ramp stops (score 0 = cold blue, score 1 = hot red)
const HEAT_STOPS: Array<[number, Rgb]> = [
  [0.0, [24, 48, 130]],
  [0.35, [46, 158, 188]],
  [0.65, [244, 211, 76]],
  [1.0, [198, 31, 31]],
];

export const NEUTRAL: Rgb = [234, 234, 234];
// values near -1 flag potential false negatives, near +1 potential
// false positives; the two arms must read as opposites
export const FN_WARNING: Rgb = [33, 102, 172];
export const FP_WARNING: Rgb = [178, 24, 43];

// minimum tint for any nonzero signed value
const SIGN_FLOOR = 0.12;

function mix(a: Rgb, b: Rgb, t: number): Rgb {
  return [
    Math.round(a[0] + (b[0] - a[0]) * t),
    Math.round(a[1] + (b[1] - a[1]) * t),
    Math.round(a[2] + (b[2] - a[2]) * t),
  ];
}

function clamp(v: number, lo: number, hi: number): number {
  return Math.min(hi, Math.max(lo, v));
}

/** Continuous colormap for heatmap scores in [0, 1]. */
export function heatColor(value: number): Rgb {
  const v = clamp(value, 0, 1);
  for (let k = 1; k < HEAT_STOPS.length; k++) {
    const [x1, c1] = HEAT_STOPS[k];
    if (v <= x1) {
      const [x0, c0] = HEAT_STOPS[k - 1];
      return mix(c0, c1, (v - x0) / (x1 - x0));
    }
  }
  return HEAT_STOPS[HEAT_STOPS.length - 1][1];
}

/** Diverging colormap for signed uncertainty in [-1, 1], hard zero. */
export function divergingColor(value: number): Rgb {
  if (value === 0) {
    return NEUTRAL;
  }
  const v = clamp(value, -1, 1);
  const t = SIGN_FLOOR + (1 - SIGN_FLOOR) * Math.abs(v);
  return v < 0 ? mix(NEUTRAL, FN_WARNING, t) : mix(NEUTRAL, FP_WARNING, t);
}

export function cssColor(c: Rgb): string {
  return `rgb(${c[0]}, ${c[1]}, ${c[2]})`;
}

import { describe, expect, it } from "vitest";

import {
  FN_WARNING,
  FP_WARNING,
  NEUTRAL,
  divergingColor,
  heatColor,
} from "../src/colormap.js";

describe("heatColor", () => {
  it("is cold at 0 and hot at 1", () => {
    const cold = heatColor(0);
    const hot = heatColor(1);
    expect(cold[2]).toBeGreaterThan(cold[0]);
    expect(hot[0]).toBeGreaterThan(hot[2]);
  });

  it("is continuous over [0, 1]", () => {
    let prev = heatColor(0);
    for (let k = 1; k <= 200; k++) {
      const cur = heatColor(k / 200);
      for (let ch = 0; ch < 3; ch++) {
        expect(Math.abs(cur[ch] - prev[ch])).toBeLessThanOrEqual(4);
      }
      prev = cur;
    }
  });

  it("clamps out-of-range scores", () => {
    expect(heatColor(-0.5)).toEqual(heatColor(0));
    expect(heatColor(1.5)).toEqual(heatColor(1));
  });
});

describe("divergingColor", () => {
  it("hits the warning colors exactly at the extremes", () => {
    expect(divergingColor(-1)).toEqual(FN_WARNING);
    expect(divergingColor(1)).toEqual(FP_WARNING);
  });

  it("renders neutral only at exactly zero", () => {
    expect(divergingColor(0)).toEqual(NEUTRAL);
    expect(divergingColor(1e-9)).not.toEqual(NEUTRAL);
    expect(divergingColor(-1e-9)).not.toEqual(NEUTRAL);
  });

  it("tints toward the side color immediately", () => {
    const tiny = divergingColor(0.001);
    const toward = (c: number[]) =>
      Math.hypot(c[0] - FP_WARNING[0], c[1] - FP_WARNING[1], c[2] - FP_WARNING[2]);
    expect(toward(tiny)).toBeLessThan(toward(NEUTRAL));
  });

  it("uses the same mix fraction for +v and -v", () => {
    for (const v of [0.1, 0.25, 0.5, 0.9]) {
      const pos = divergingColor(v);
      const neg = divergingColor(-v);
      // recover the mix fraction from the red channel of each arm
      const tPos = (pos[0] - NEUTRAL[0]) / (FP_WARNING[0] - NEUTRAL[0]);
      const tNeg = (neg[0] - NEUTRAL[0]) / (FN_WARNING[0] - NEUTRAL[0]);
      expect(Math.abs(tPos - tNeg)).toBeLessThan(0.02);
    }
  });

  it("grows monotonically in magnitude", () => {
    const dist = (v: number) => {
      const c = divergingColor(v);
      return Math.hypot(c[0] - NEUTRAL[0], c[1] - NEUTRAL[1], c[2] - NEUTRAL[2]);
    };
    expect(dist(0.2)).toBeLessThan(dist(0.6));
    expect(dist(0.6)).toBeLessThan(dist(1.0));
    expect(dist(-0.2)).toBeLessThan(dist(-0.6));
  });
});

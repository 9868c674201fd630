import { describe, expect, it } from "vitest";
import { composeRGBA, dialNeedle, heatColor, integerZoom } from "../src/frameview.js";

describe("composeRGBA", () => {
  it("passes grayscale through when no saliency overlay", () => {
    const rgba = composeRGBA(new Uint8Array([0, 128, 255]), null, 0.5);
    expect(Array.from(rgba)).toEqual([0, 0, 0, 255, 128, 128, 128, 255, 255, 255, 255, 255]);
  });

  it("blends the heat colormap at the given alpha", () => {
    const gray = new Uint8Array([100]);
    const sal = new Uint8Array([255]);
    const full = composeRGBA(gray, sal, 1.0);
    const [r, g, b] = heatColor(1.0);
    expect(Array.from(full.slice(0, 3))).toEqual([r, g, b]);
    const none = composeRGBA(gray, sal, 0.0);
    expect(Array.from(none.slice(0, 3))).toEqual([100, 100, 100]);
  });
});

describe("heatColor", () => {
  it("is monotone dark-to-bright and clamps its input", () => {
    const lum = (c: [number, number, number]) => c[0] + c[1] + c[2];
    expect(lum(heatColor(0))).toBeLessThan(lum(heatColor(0.5)));
    expect(lum(heatColor(0.5))).toBeLessThan(lum(heatColor(1)));
    expect(heatColor(-5)).toEqual(heatColor(0));
    expect(heatColor(7)).toEqual(heatColor(1));
  });
});

describe("integerZoom", () => {
  it("picks the largest integer zoom that fits", () => {
    expect(integerZoom(64, 36, 640, 360)).toBe(10);
    expect(integerZoom(64, 36, 650, 360)).toBe(10);
    expect(integerZoom(320, 180, 100, 100)).toBe(1); // never below 1
  });
});

describe("dialNeedle", () => {
  it("points up at zero and left of center for negative steer", () => {
    const up = dialNeedle(0, 60, 60, 50);
    expect(up.x).toBeCloseTo(60);
    expect(up.y).toBeCloseTo(10);
    expect(dialNeedle(-15, 60, 60, 50).x).toBeLessThan(60);
    expect(dialNeedle(15, 60, 60, 50).x).toBeGreaterThan(60);
  });
});

/** Frame panel rendering helpers: grayscale expansion, saliency heat
 * colormap, integer zoom, steering dial geometry. The RGBA builders are pure
 * so they can be unit-tested without a canvas. */

import { FrameBundle } from "./session.js";

/** Perceptually-uniform-ish heat ramp (dark blue -> magenta -> yellow),
 * sampled from the inferno colormap at 8 anchors, linearly interpolated. */
const RAMP: [number, number, number][] = [
  [0, 0, 4],
  [40, 11, 84],
  [101, 21, 110],
  [159, 42, 99],
  [212, 72, 66],
  [245, 125, 21],
  [250, 193, 39],
  [252, 255, 164],
];

export function heatColor(t: number): [number, number, number] {
  const x = Math.min(Math.max(t, 0), 1) * (RAMP.length - 1);
  const i = Math.min(Math.floor(x), RAMP.length - 2);
  const f = x - i;
  const a = RAMP[i];
  const b = RAMP[i + 1];
  return [
    Math.round(a[0] + f * (b[0] - a[0])),
    Math.round(a[1] + f * (b[1] - a[1])),
    Math.round(a[2] + f * (b[2] - a[2])),
  ];
}

/** Grayscale pixels + optional saliency overlay -> RGBA buffer (w*h*4). */
export function composeRGBA(
  pixels: Uint8Array,
  saliency: Uint8Array | null,
  alpha: number,
): Uint8ClampedArray<ArrayBuffer> {
  const out = new Uint8ClampedArray(new ArrayBuffer(pixels.length * 4));
  for (let i = 0; i < pixels.length; i++) {
    let r = pixels[i];
    let g = pixels[i];
    let b = pixels[i];
    if (saliency !== null) {
      const [hr, hg, hb] = heatColor(saliency[i] / 255);
      r = Math.round((1 - alpha) * r + alpha * hr);
      g = Math.round((1 - alpha) * g + alpha * hg);
      b = Math.round((1 - alpha) * b + alpha * hb);
    }
    out[4 * i] = r;
    out[4 * i + 1] = g;
    out[4 * i + 2] = b;
    out[4 * i + 3] = 255;
  }
  return out;
}

/** Largest integer zoom that fits the frame into the given box (>= 1). */
export function integerZoom(w: number, h: number, boxW: number, boxH: number): number {
  return Math.max(1, Math.floor(Math.min(boxW / w, boxH / h)));
}

/** Needle endpoint for the steering dial: 0 deg points up; negative steer
 * swings the needle left of center. */
export function dialNeedle(
  steerDeg: number,
  cx: number,
  cy: number,
  radius: number,
): { x: number; y: number } {
  const theta = (steerDeg * Math.PI) / 180;
  return { x: cx + radius * Math.sin(theta), y: cy - radius * Math.cos(theta) };
}

export function drawFrame(
  ctx: CanvasRenderingContext2D,
  frame: FrameBundle,
  showSaliency: boolean,
  alpha: number,
  boxW: number,
  boxH: number,
): void {
  const zoom = integerZoom(frame.w, frame.h, boxW, boxH);
  const rgba = composeRGBA(frame.pixels, showSaliency ? frame.saliency : null, alpha);
  const img = new ImageData(rgba, frame.w, frame.h);
  const off = new OffscreenCanvas(frame.w, frame.h);
  const octx = off.getContext("2d")!;
  octx.putImageData(img, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.clearRect(0, 0, boxW, boxH);
  ctx.drawImage(off, 0, 0, frame.w * zoom, frame.h * zoom);
}

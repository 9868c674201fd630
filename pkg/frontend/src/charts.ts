/** Loss/accuracy chart rendering: a pure series extractor plus a minimal
 * canvas line plotter. Only the extractor carries logic worth testing. */

import { TrainProgressMessage } from "./protocol.js";

export interface Series {
  /** Parallel arrays; points with missing values are simply not present. */
  steps: number[];
  values: number[];
}

/** Picks (step, field) pairs, skipping null/undefined values so absent
 * val_loss points leave no gap artifacts. */
export function extractSeries(
  snapshots: TrainProgressMessage[],
  field: keyof TrainProgressMessage,
): Series {
  const steps: number[] = [];
  const values: number[] = [];
  for (const s of snapshots) {
    const v = s[field];
    if (typeof v === "number" && Number.isFinite(v)) {
      steps.push(s.step);
      values.push(v);
    }
  }
  return { steps, values };
}

export interface Line {
  series: Series;
  color: string;
}

export function drawChart(
  ctx: CanvasRenderingContext2D,
  width: number,
  height: number,
  lines: Line[],
  label: string,
): void {
  ctx.clearRect(0, 0, width, height);
  ctx.fillStyle = "#15181e";
  ctx.fillRect(0, 0, width, height);
  ctx.fillStyle = "#8a93a5";
  ctx.font = "11px monospace";
  ctx.fillText(label, 6, 14);

  const all = lines.filter((l) => l.series.steps.length > 0);
  if (all.length === 0) {
    ctx.fillText("(waiting for data)", 6, height / 2);
    return;
  }
  const xs = all.flatMap((l) => l.series.steps);
  const ys = all.flatMap((l) => l.series.values);
  const x0 = Math.min(...xs);
  const x1 = Math.max(...xs);
  const y0 = Math.min(...ys);
  const y1 = Math.max(...ys);
  const sx = (x: number) => 4 + ((width - 8) * (x - x0)) / Math.max(x1 - x0, 1e-9);
  const sy = (y: number) => height - 6 - ((height - 26) * (y - y0)) / Math.max(y1 - y0, 1e-9);

  for (const line of all) {
    ctx.strokeStyle = line.color;
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    line.series.steps.forEach((x, i) => {
      const px = sx(x);
      const py = sy(line.series.values[i]);
      if (i === 0) ctx.moveTo(px, py);
      else ctx.lineTo(px, py);
    });
    ctx.stroke();
  }
  ctx.fillStyle = "#8a93a5";
  ctx.fillText(y1.toPrecision(3), width - 52, 14);
  ctx.fillText(y0.toPrecision(3), width - 52, height - 8);
}

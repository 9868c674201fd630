/** DOM + websocket wiring for the operator console. */

import { extractSeries, drawChart } from "./charts.js";
import { dialNeedle, drawFrame } from "./frameview.js";
import { PROTO_VERSION, Prediction } from "./protocol.js";
import { ConsoleSession } from "./session.js";

const session = new ConsoleSession();

const $ = (id: string) => document.getElementById(id)!;
const canvas = (id: string) => $(id) as HTMLCanvasElement;
const ctx2d = (id: string) => canvas(id).getContext("2d")!;

function connect(): void {
  const url = (($("ws-url") as HTMLInputElement).value || "ws://127.0.0.1:8800").trim();
  const ws = new WebSocket(url);
  ws.onopen = () => {
    session.onOpen();
    session.attach((text) => ws.send(text));
    session.send({ type: "hello", proto: PROTO_VERSION });
  };
  ws.onmessage = (ev) => session.handleRaw(String(ev.data));
  ws.onclose = () => session.onClose();
  ws.onerror = () => {
    session.errorBadge = "websocket error";
  };
}

$("connect").addEventListener("click", connect);
$("pause").addEventListener("click", () => session.send({ type: "pause" }));
$("step").addEventListener("click", () => session.send({ type: "step" }));
$("resume").addEventListener("click", () => session.send({ type: "resume" }));

function fmt(v: number, digits = 1): string {
  return v.toFixed(digits);
}

function renderPrediction(el: HTMLElement, p: Prediction | null): void {
  if (p === null) {
    el.textContent = "—";
    return;
  }
  el.textContent = `steer ${fmt(p.steer_deg)}°  throttle ${fmt(p.throttle, 2)}  brake ${fmt(p.brake, 2)}`;
}

function renderProbBars(el: HTMLElement, probs: number[] | undefined, labels?: string[]): void {
  el.innerHTML = "";
  if (!probs) return;
  probs.forEach((p, i) => {
    const bar = document.createElement("div");
    bar.className = "bar";
    bar.style.height = `${Math.round(100 * p)}%`;
    bar.title = labels ? `${labels[i]}: ${p.toFixed(3)}` : p.toFixed(3);
    el.appendChild(bar);
  });
}

function redraw(): void {
  const snapshots = session.metrics.toArray();
  drawChart(ctx2d("loss-chart"), 380, 160, [
    { series: extractSeries(snapshots, "train_loss"), color: "#e8b84a" },
    { series: extractSeries(snapshots, "val_loss"), color: "#4ac0e8" },
  ], "loss (train / val)");
  drawChart(ctx2d("acc-chart"), 380, 160, [
    { series: extractSeries(snapshots, "accel_acc"), color: "#6fe84a" },
    { series: extractSeries(snapshots, "steer_within20"), color: "#c84ae8" },
  ], "accuracy (accel / steer within 20°)");

  const badge = $("badge");
  badge.textContent = session.errorBadge ?? "";
  badge.style.display = session.errorBadge ? "inline-block" : "none";
  $("conn-state").textContent = session.connected
    ? (session.paused ? `paused (${session.cached} cached)` : "running")
    : "disconnected";
  ($("step") as HTMLButtonElement).disabled = !session.connected || !session.paused;
  ($("pause") as HTMLButtonElement).disabled = !session.connected;
  ($("resume") as HTMLButtonElement).disabled = !session.connected;

  const frame = session.frame;
  const overlayToggle = $("saliency-toggle") as HTMLInputElement;
  overlayToggle.disabled = frame?.saliency == null;
  if (frame !== null) {
    const alpha = Number(($("saliency-alpha") as HTMLInputElement).value) / 100;
    drawFrame(ctx2d("frame"), frame, overlayToggle.checked && !overlayToggle.disabled, alpha, 640, 360);
    $("frame-id").textContent = `frame ${frame.frameId}`;
    renderPrediction($("pred"), frame.pred);
    renderPrediction($("truth"), frame.truth);
    renderProbBars($("steer-probs"), frame.pred.steer_probs);
    renderProbBars($("accel-probs"), frame.pred.accel_probs, ["THROTTLE", "NEUTRAL", "BRAKE"]);

    const dctx = ctx2d("dial");
    dctx.clearRect(0, 0, 120, 120);
    dctx.strokeStyle = "#39404d";
    dctx.beginPath();
    dctx.arc(60, 64, 50, 0, 2 * Math.PI);
    dctx.stroke();
    dctx.strokeStyle = "#e8b84a";
    dctx.lineWidth = 2;
    const tip = dialNeedle(frame.pred.steer_deg, 60, 64, 46);
    dctx.beginPath();
    dctx.moveTo(60, 64);
    dctx.lineTo(tip.x, tip.y);
    dctx.stroke();
    if (frame.truth !== null) {
      dctx.strokeStyle = "#4ac0e8";
      dctx.lineWidth = 1;
      const t = dialNeedle(frame.truth.steer_deg, 60, 64, 46);
      dctx.beginPath();
      dctx.moveTo(60, 64);
      dctx.lineTo(t.x, t.y);
      dctx.stroke();
    }
  }
  requestAnimationFrame(redraw);
}

requestAnimationFrame(redraw);

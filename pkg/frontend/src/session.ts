/** Console session state machine, independent of DOM and websocket.
 *
 * Feed it raw wire text via handleRaw(); it updates metrics history, the
 * current frame bundle, the paused flag (only on bridge status
 * acknowledgment, never optimistically) and a transient error badge.
 */

import {
  BridgeMessage,
  Command,
  EvalFrameMessage,
  ProtocolError,
  StatusMessage,
  TrainProgressMessage,
  decodeGray,
  parseMessage,
} from "./protocol.js";
import { RingBuffer } from "./ringbuffer.js";

export const METRICS_CAPACITY = 500;

export type Mode = "idle" | "training" | "evaluation";

export interface FrameBundle {
  frameId: number;
  w: number;
  h: number;
  pixels: Uint8Array;
  saliency: Uint8Array | null;
  pred: EvalFrameMessage["pred"];
  truth: EvalFrameMessage["truth"];
}

export class ConsoleSession {
  connected = false;
  paused = false;
  mode: Mode = "idle";
  cached = 0;
  errorBadge: string | null = null;
  readonly metrics = new RingBuffer<TrainProgressMessage>(METRICS_CAPACITY);
  frame: FrameBundle | null = null;
  /** frame_ids in delivery order, for the exactly-once stepping invariant. */
  readonly deliveredFrameIds: number[] = [];

  private sender: ((text: string) => void) | null = null;

  attach(sender: (text: string) => void): void {
    this.sender = sender;
  }

  onOpen(): void {
    this.connected = true;
    this.errorBadge = null;
  }

  onClose(): void {
    this.connected = false;
    this.sender = null;
  }

  /** The console sends only hello/pause/step/resume. */
  send(cmd: Command): void {
    if (!this.connected || this.sender === null) return;
    this.sender(JSON.stringify(cmd));
  }

  /** Handles one wire message; never throws (malformed input sets the badge). */
  handleRaw(raw: string): void {
    let msg: BridgeMessage;
    try {
      msg = parseMessage(raw);
    } catch (e) {
      this.errorBadge = e instanceof ProtocolError ? e.message : String(e);
      return;
    }
    this.handle(msg);
  }

  handle(msg: BridgeMessage): void {
    switch (msg.type) {
      case "hello":
        break;
      case "status":
        this.applyStatus(msg);
        break;
      case "train_progress":
        this.mode = "training";
        this.metrics.push(msg);
        break;
      case "eval_frame":
        this.mode = "evaluation";
        this.applyFrame(msg);
        break;
    }
  }

  private applyStatus(msg: StatusMessage): void {
    // paused flag moves only here: on acknowledgment from the bridge.
    this.paused = msg.state === "paused";
    this.cached = msg.cached;
    if (msg.error) this.errorBadge = msg.error;
  }

  private applyFrame(msg: EvalFrameMessage): void {
    let pixels: Uint8Array;
    let saliency: Uint8Array | null = null;
    try {
      pixels = decodeGray(msg.frame_b64, msg.w, msg.h);
      if (msg.saliency_b64 !== undefined) {
        saliency = decodeGray(msg.saliency_b64, msg.w, msg.h);
      }
    } catch (e) {
      // Frame skipped, badge shown, connection untouched.
      this.errorBadge = e instanceof ProtocolError ? e.message : String(e);
      return;
    }
    this.frame = {
      frameId: msg.frame_id,
      w: msg.w,
      h: msg.h,
      pixels,
      saliency,
      pred: msg.pred,
      truth: msg.truth,
    };
    this.deliveredFrameIds.push(msg.frame_id);
  }
}

/** Wire protocol types and validation for the ignition viz bridge.
 *
 * One JSON object per websocket text message. The console only ever sends
 * hello/pause/step/resume.
 */

export const PROTO_VERSION = 1;

export interface Prediction {
  steer_deg: number;
  throttle: number;
  brake: number;
  steer_probs?: number[];
  accel_probs?: number[];
}

export interface HelloMessage {
  type: "hello";
  proto: number;
}

export interface StatusMessage {
  type: "status";
  state: "running" | "paused";
  cached: number;
  error?: string;
  heartbeat?: boolean;
}

export interface TrainProgressMessage {
  type: "train_progress";
  step: number;
  epoch: number;
  train_loss: number | null;
  val_loss: number | null;
  accel_acc?: number | null;
  steer_acc?: number | null;
  steer_within20?: number | null;
}

export interface EvalFrameMessage {
  type: "eval_frame";
  frame_id: number;
  frame_b64: string;
  w: number;
  h: number;
  pred: Prediction;
  truth: Prediction | null;
  saliency_b64?: string;
}

export type BridgeMessage =
  | HelloMessage
  | StatusMessage
  | TrainProgressMessage
  | EvalFrameMessage;

export type Command =
  | { type: "hello"; proto: number }
  | { type: "pause" }
  | { type: "step" }
  | { type: "resume" };

export class ProtocolError extends Error {}

/** Parses one wire message; throws ProtocolError on anything unusable. */
export function parseMessage(raw: string): BridgeMessage {
  let obj: unknown;
  try {
    obj = JSON.parse(raw);
  } catch {
    throw new ProtocolError("not JSON");
  }
  if (typeof obj !== "object" || obj === null || Array.isArray(obj)) {
    throw new ProtocolError("not an object");
  }
  const msg = obj as Record<string, unknown>;
  switch (msg.type) {
    case "hello":
      if (typeof msg.proto !== "number") throw new ProtocolError("hello without proto");
      return msg as unknown as HelloMessage;
    case "status":
      if (msg.state !== "running" && msg.state !== "paused") {
        throw new ProtocolError(`bad status state: ${String(msg.state)}`);
      }
      return msg as unknown as StatusMessage;
    case "train_progress":
      if (typeof msg.step !== "number") throw new ProtocolError("train_progress without step");
      return msg as unknown as TrainProgressMessage;
    case "eval_frame": {
      if (typeof msg.frame_b64 !== "string" || typeof msg.w !== "number" || typeof msg.h !== "number") {
        throw new ProtocolError("eval_frame missing frame_b64/w/h");
      }
      return msg as unknown as EvalFrameMessage;
    }
    default:
      throw new ProtocolError(`unknown message type: ${String(msg.type)}`);
  }
}

/** Decodes a base64 u8 payload and enforces the exact-length invariant. */
export function decodeGray(b64: string, w: number, h: number): Uint8Array {
  let bin: string;
  try {
    bin = atob(b64);
  } catch {
    throw new ProtocolError("invalid base64 payload");
  }
  if (bin.length !== w * h) {
    throw new ProtocolError(`payload is ${bin.length} bytes, expected ${w * h} (${w}x${h})`);
  }
  const out = new Uint8Array(bin.length);
  for (let i = 0; i < bin.length; i++) out[i] = bin.charCodeAt(i);
  return out;
}

export function encodeCommand(cmd: Command): string {
  return JSON.stringify(cmd);
}

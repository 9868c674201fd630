"""Closed-loop driving: render, predict, actuate, measure.

The control loop runs at 10 Hz; each decoded command is held for 10 physics
steps of the 100 Hz simulator. A shadow oracle command is computed every
control step (never applied) so driving quality can be scored against the
expert online.
"""

from __future__ import annotations

import base64
import csv
import time
from dataclasses import dataclass, asdict

import numpy as np

from ignition import model as M
from ignition import track as trackmod
from ignition.dynamics import DT, CarParams, CarState, ControlCommand, reset_to_track, step
from ignition.model import DrivingModel
from ignition.oracle import OracleDriver, OracleError, OracleParams
from ignition.render import CameraParams, render

CONTROL_HZ = 10
PHYSICS_STEPS_PER_CONTROL = 10
CONTROL_DT = PHYSICS_STEPS_PER_CONTROL * DT

INTERVENTION_MARGIN_M = 2.0
INTERVENTION_SECONDS = 2.0
_INTERVENTION_STEPS = int(round(INTERVENTION_SECONDS * CONTROL_HZ))

TRAJECTORY_FIELDS = ("step", "x", "y", "heading", "speed_mps",
                     "steer_deg", "throttle", "brake", "lateral_offset")


class ControllerError(RuntimeError):
    pass


@dataclass
class DriveReport:
    laps_completed: float
    interventions: int
    off_track_time_s: float
    mean_abs_steer_error_deg: float
    accel_agreement: float
    steer_within20_agreement: float
    duration_s: float

    def __post_init__(self):
        if self.laps_completed < 0 or self.interventions < 0:
            raise ControllerError("negative counters in drive report")
        if not 0.0 <= self.off_track_time_s <= self.duration_s + 1e-9:
            raise ControllerError("off_track_time_s outside [0, duration]")
        for a in (self.accel_agreement, self.steer_within20_agreement):
            if not 0.0 <= a <= 1.0:
                raise ControllerError("agreement outside [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def _command_dict(cmd: ControlCommand) -> dict:
    return {"steer_deg": float(cmd.steer_deg),
            "throttle": float(cmd.throttle),
            "brake": float(cmd.brake)}


class _ModelPolicy:
    """Wraps a trained model + its training normalization for 1-frame use."""

    def __init__(self, model: DrivingModel, normalization: dict, camera: CameraParams):
        if model.config.head != "classification":
            raise ControllerError("closed-loop driving requires a classification model")
        std = normalization.get("std", 0.0)
        if not std or std <= 0:
            raise ControllerError("normalization stats missing or degenerate")
        self.model = model
        self.mean = float(normalization["mean"])
        self.std = float(std)
        self.camera = camera
        self.size = (model.config.input_width, model.config.input_height)

    def act(self, track, state: CarState, frame_seed: int):
        frame = render(track, state, self.camera, size=self.size, seed=frame_seed)
        z = (frame.pixels.astype(np.float32) / 255.0 - self.mean) / self.std
        steer_logits, accel_logits = self.model.forward(
            z[None, :, :, None], np.array([state.speed_mph], np.float32))
        if not (np.all(np.isfinite(steer_logits.data)) and np.all(np.isfinite(accel_logits.data))):
            raise ControllerError("non-finite model output")
        bucket = int(steer_logits.data.argmax())
        accel = int(accel_logits.data.argmax())
        cmd = M.decode_command(bucket, accel)
        return cmd, frame, steer_logits.data[0], accel_logits.data[0]


def _eval_frame_message(frame, frame_id, pred_cmd, truth_cmd,
                        steer_logits=None, accel_logits=None, saliency_map=None) -> dict:
    pred = _command_dict(pred_cmd)
    if steer_logits is not None:
        pred["steer_probs"] = [float(p) for p in _softmax(steer_logits)]
    if accel_logits is not None:
        pred["accel_probs"] = [float(p) for p in _softmax(accel_logits)]
    msg = {
        "type": "eval_frame",
        "frame_b64": base64.b64encode(frame.pixels.tobytes()).decode("ascii"),
        "w": frame.width,
        "h": frame.height,
        "pred": pred,
        "truth": _command_dict(truth_cmd) if truth_cmd is not None else None,
        "frame_id": frame_id,
    }
    if saliency_map is not None:
        q = np.clip(np.rint(saliency_map / max(saliency_map.max(), 1e-12) * 255), 0, 255)
        msg["saliency_b64"] = base64.b64encode(q.astype(np.uint8).tobytes()).decode("ascii")
    return msg


def drive(
    model: DrivingModel | None,
    normalization: dict | None,
    track: trackmod.TrackSpec,
    car_params: CarParams | None = None,
    oracle_params: OracleParams | None = None,
    duration_s: float = 120.0,
    seed: int = 0,
    oracle_bypass: bool = False,
    fast: bool = True,
    camera: CameraParams | None = None,
    trajectory_path=None,
    publish=None,
    include_saliency: bool = False,
) -> DriveReport:
    """Drive the track closed-loop for duration_s and report quality metrics.

    With oracle_bypass the oracle's own command is applied (the model, if
    given, is ignored); otherwise the model decides and the oracle only
    shadows. Deterministic given (model, seed) in fast mode.
    """
    if duration_s <= 0:
        raise ControllerError("duration_s must be > 0")
    if not oracle_bypass and (model is None or normalization is None):
        raise ControllerError("drive needs a model + normalization, or oracle_bypass")
    car_params = car_params or CarParams()
    camera = camera or CameraParams()
    oracle = OracleDriver(track, car_params, oracle_params or OracleParams())
    policy = None if oracle_bypass else _ModelPolicy(model, normalization, camera)

    n_control = int(round(duration_s * CONTROL_HZ))
    frame_seeds = np.random.SeedSequence([seed]).generate_state(max(n_control, 1), np.uint64)
    state = reset_to_track(CarState(), track, 0.0)
    half_width = track.width / 2.0

    interventions = 0
    off_steps = 0
    consecutive_far = 0
    progress = 0.0
    prev_s, _ = trackmod.locate(track, (state.x, state.y))
    steer_errors: list[float] = []
    accel_hits = 0
    within20 = 0
    shadow_steps = 0
    rows = []
    next_tick = time.monotonic()

    for i in range(n_control):
        try:
            oracle_cmd = oracle.command(state)
        except OracleError:
            oracle_cmd = None

        frame = None
        logits = (None, None)
        if policy is None:
            cmd = oracle_cmd if oracle_cmd is not None else ControlCommand(0.0, 0.0, 1.0)
        else:
            cmd, frame, sl, al = policy.act(track, state, int(frame_seeds[i]))
            logits = (sl, al)
            if oracle_cmd is not None:
                err = abs(cmd.steer_deg - oracle_cmd.steer_deg)
                steer_errors.append(err)
                within20 += err <= 20.0
                accel_hits += M.accel_class(cmd.throttle, cmd.brake) == \
                    M.accel_class(oracle_cmd.throttle, oracle_cmd.brake)
                shadow_steps += 1

        if publish is not None and frame is not None:
            sal = None
            if include_saliency:
                z = (frame.pixels.astype(np.float32) / 255.0 - policy.mean) / policy.std
                sal = M.saliency(policy.model, z, state.speed_mph)
            try:
                publish(_eval_frame_message(frame, i, cmd, oracle_cmd,
                                            logits[0], logits[1], sal))
            except Exception:
                pass

        for _ in range(PHYSICS_STEPS_PER_CONTROL):
            state = step(state, cmd, car_params, DT)

        s_now, lateral = trackmod.locate(track, (state.x, state.y))
        delta = (s_now - prev_s + track.total_length / 2.0) % track.total_length \
            - track.total_length / 2.0
        progress += delta
        prev_s = s_now
        rows.append((i, state.x, state.y, state.heading, state.speed,
                     cmd.steer_deg, cmd.throttle, cmd.brake, lateral))
        if abs(lateral) > half_width:
            off_steps += 1
        if abs(lateral) > half_width + INTERVENTION_MARGIN_M:
            consecutive_far += 1
            if consecutive_far >= _INTERVENTION_STEPS:
                state = reset_to_track(state, track, s_now)
                prev_s, _ = trackmod.locate(track, (state.x, state.y))
                interventions += 1
                consecutive_far = 0
        else:
            consecutive_far = 0

        if not fast:
            next_tick += 1.0 / CONTROL_HZ
            delay = next_tick - time.monotonic()
            if delay > 0:
                time.sleep(delay)

    if trajectory_path is not None:
        with open(trajectory_path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(TRAJECTORY_FIELDS)
            writer.writerows(rows)

    return DriveReport(
        laps_completed=float(max(0.0, progress / track.total_length)),
        interventions=interventions,
        off_track_time_s=off_steps / CONTROL_HZ,
        mean_abs_steer_error_deg=float(np.mean(steer_errors)) if steer_errors else 0.0,
        accel_agreement=float(accel_hits / shadow_steps) if shadow_steps else 0.0,
        steer_within20_agreement=float(within20 / shadow_steps) if shadow_steps else 0.0,
        duration_s=n_control / CONTROL_HZ,
    )


def shadow_compare(
    model: DrivingModel,
    normalization: dict,
    track: trackmod.TrackSpec,
    car_params: CarParams | None = None,
    oracle_params: OracleParams | None = None,
    n_steps: int = 100,
    seed: int = 0,
    camera: CameraParams | None = None,
    publish=None,
) -> list[dict]:
    """Oracle drives; the model predicts open-loop on the oracle's frames.

    Returns one row per control step: frame_id, model prediction, oracle
    command, and the class-level agreement flags.
    """
    if n_steps < 1:
        raise ControllerError("n_steps must be >= 1")
    car_params = car_params or CarParams()
    camera = camera or CameraParams()
    oracle = OracleDriver(track, car_params, oracle_params or OracleParams())
    policy = _ModelPolicy(model, normalization, camera)
    frame_seeds = np.random.SeedSequence([seed]).generate_state(n_steps, np.uint64)
    state = reset_to_track(CarState(), track, 0.0)
    rows = []
    for i in range(n_steps):
        oracle_cmd = oracle.command(state)
        pred_cmd, frame, sl, al = policy.act(track, state, int(frame_seeds[i]))
        rows.append({
            "frame_id": i,
            "pred": _command_dict(pred_cmd),
            "oracle": _command_dict(oracle_cmd),
            "steer_abs_error_deg": abs(pred_cmd.steer_deg - oracle_cmd.steer_deg),
            "accel_match": M.accel_class(pred_cmd.throttle, pred_cmd.brake)
            == M.accel_class(oracle_cmd.throttle, oracle_cmd.brake),
        })
        if publish is not None:
            try:
                publish(_eval_frame_message(frame, i, pred_cmd, oracle_cmd, sl, al))
            except Exception:
                pass
        for _ in range(PHYSICS_STEPS_PER_CONTROL):
            state = step(state, oracle_cmd, car_params, DT)
    return rows

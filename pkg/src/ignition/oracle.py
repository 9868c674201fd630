"""Oracle driver: deterministic track-following expert used to label data.

Steering is pure pursuit toward a speed-scaled lookahead point; longitudinal
control is bang-bang against a precomputed curvature- and braking-limited
target speed profile, so throttle and brake labels are always exactly 0 or 1
and never both nonzero.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from ignition import track as trackmod
from ignition.dynamics import DT, CarParams, CarState, ControlCommand, reset_to_track, step


class OracleError(RuntimeError):
    pass


@dataclass(frozen=True)
class OracleParams:
    lookahead_gain: float = 0.5    # seconds of travel
    lookahead_min: float = 8.0     # m
    lookahead_max: float = 60.0    # m
    lat_accel_max: float = 25.0    # m/s^2 self-imposed cornering limit
    brake_horizon: float = 250.0   # m
    speed_hysteresis: float = 2.0  # m/s
    steer_clip: float = 180.0      # deg

    def __post_init__(self):
        if self.lookahead_min > self.lookahead_max:
            raise ValueError("lookahead_min must be <= lookahead_max")
        for f in ("lookahead_gain", "lookahead_min", "lookahead_max", "lat_accel_max",
                  "brake_horizon", "speed_hysteresis", "steer_clip"):
            if getattr(self, f) <= 0:
                raise ValueError(f"OracleParams.{f} must be > 0")

    @classmethod
    def from_json(cls, path) -> "OracleParams":
        with open(path, encoding="utf-8") as f:
            return cls(**json.load(f))


def target_speed_profile(track: trackmod.TrackSpec, car: CarParams, params: OracleParams) -> np.ndarray:
    """Per-sample target speed: curvature limit, pulled down by braking
    distance to any slower point within the brake horizon."""
    kappa = np.maximum(np.abs(track.curvature), 1e-6)
    v_kappa = np.minimum(car.top_speed, np.sqrt(params.lat_accel_max / kappa))
    n = len(v_kappa)
    horizon_steps = min(n, int(params.brake_horizon / track.ds) + 1)
    v_t = v_kappa.copy()
    for j in range(1, horizon_steps):
        d = j * track.ds
        bound = np.sqrt(np.roll(v_kappa, -j) ** 2 + 2.0 * car.brake_gain * d)
        np.minimum(v_t, bound, out=v_t)
    return v_t


class OracleDriver:
    """Stateless-per-step expert controller bound to one (track, car) pair."""

    def __init__(self, track: trackmod.TrackSpec, car: CarParams, params: OracleParams | None = None):
        self.track = track
        self.car = car
        self.params = params or OracleParams()
        self.v_target = target_speed_profile(track, car, self.params)

    def command(self, state: CarState) -> ControlCommand:
        track, car, p = self.track, self.car, self.params
        s, lateral = trackmod.locate(track, (state.x, state.y))
        if abs(lateral) > 2.0 * track.width:
            raise OracleError(f"car is {lateral:.1f} m off the centerline; reset it")

        # Pure pursuit steering.
        ld = min(p.lookahead_max, max(p.lookahead_min, p.lookahead_gain * state.speed))
        target = trackmod.lookahead_point(track, s, ld)
        alpha = math.atan2(target[1] - state.y, target[0] - state.x) - state.heading
        alpha = math.atan2(math.sin(alpha), math.cos(alpha))
        delta = math.atan2(2.0 * car.wheelbase * math.sin(alpha), ld)
        steer = math.degrees(delta) * car.steer_ratio
        steer = min(p.steer_clip, max(-p.steer_clip, steer))

        # Bang-bang speed control against the target profile.
        v_t = float(self.v_target[track.sample_s(s)])
        if state.speed > v_t + p.speed_hysteresis:
            throttle, brake = 0.0, 1.0
        elif state.speed < v_t - p.speed_hysteresis:
            throttle, brake = 1.0, 0.0
        else:
            throttle, brake = 0.0, 0.0
        return ControlCommand(steer_deg=steer, throttle=throttle, brake=brake)


def oracle_command(
    track: trackmod.TrackSpec,
    state: CarState,
    car: CarParams,
    params: OracleParams | None = None,
) -> ControlCommand:
    """One-shot expert command (builds the speed profile; prefer OracleDriver
    when calling repeatedly)."""
    return OracleDriver(track, car, params).command(state)


def run_oracle_lap(
    track: trackmod.TrackSpec,
    car: CarParams | None = None,
    params: OracleParams | None = None,
    max_steps: int = 60_000,
) -> list[tuple[CarState, ControlCommand]]:
    """Drive one full lap from rest at s=0; returns the 100 Hz trajectory.

    Raises OracleError if the step budget runs out before the lap closes.
    """
    car = car or CarParams()
    driver = OracleDriver(track, car, params)
    state = reset_to_track(CarState(), track, 0.0)
    trajectory: list[tuple[CarState, ControlCommand]] = []
    progress = 0.0
    s_prev, _ = trackmod.locate(track, (state.x, state.y))
    for _ in range(max_steps):
        cmd = driver.command(state)
        trajectory.append((state, cmd))
        state = step(state, cmd, car, DT)
        s, _ = trackmod.locate(track, (state.x, state.y))
        ds = s - s_prev
        if ds > track.total_length / 2:
            ds -= track.total_length
        elif ds < -track.total_length / 2:
            ds += track.total_length
        progress += ds
        s_prev = s
        if progress >= track.total_length:
            return trajectory
    raise OracleError(f"lap not completed within {max_steps} steps; check oracle/car params")

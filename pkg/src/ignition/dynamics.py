"""Deterministic fixed-step vehicle simulation (kinematic bicycle).

States are immutable values; :func:`step` is a pure function, so identical
inputs always produce bit-identical outputs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

from ignition import MPH_PER_MPS
from ignition import track as trackmod

DT = 0.01  # 100 Hz physics


def _wrap_pi(a: float) -> float:
    """Wrap to (-pi, pi]."""
    r = math.remainder(a, math.tau)
    return r if r != -math.pi else math.pi


@dataclass(frozen=True)
class ControlCommand:
    """Steering wheel angle in degrees (positive = left, matching the
    counterclockwise-positive heading) plus throttle and brake in [0, 1].
    Fields are clamped to their ranges on construction."""

    steer_deg: float
    throttle: float
    brake: float

    def __post_init__(self):
        object.__setattr__(self, "steer_deg", min(180.0, max(-180.0, float(self.steer_deg))))
        object.__setattr__(self, "throttle", min(1.0, max(0.0, float(self.throttle))))
        object.__setattr__(self, "brake", min(1.0, max(0.0, float(self.brake))))


@dataclass(frozen=True)
class CarState:
    x: float = 0.0
    y: float = 0.0
    heading: float = 0.0  # radians, CCW, in (-pi, pi]
    speed: float = 0.0    # m/s, >= 0
    step_count: int = 0

    @property
    def sim_time(self) -> float:
        return self.step_count * DT

    @property
    def speed_mph(self) -> float:
        return self.speed * MPH_PER_MPS


@dataclass(frozen=True)
class CarParams:
    wheelbase: float = 3.6          # m
    steer_ratio: float = 12.0       # wheel deg per road-wheel deg
    max_road_wheel_deg: float = 15.0
    accel_gain: float = 9.0         # m/s^2 at full throttle
    brake_gain: float = 18.0        # m/s^2 at full brake
    drag_coeff: float = 0.00109375  # 1/m
    rolling_coeff: float = 0.025    # 1/s
    top_speed: float = 80.0         # m/s

    def __post_init__(self):
        for f in ("wheelbase", "steer_ratio", "max_road_wheel_deg", "accel_gain",
                  "brake_gain", "drag_coeff", "rolling_coeff", "top_speed"):
            if getattr(self, f) <= 0:
                raise ValueError(f"CarParams.{f} must be > 0")
        balance = self.drag_coeff * self.top_speed**2 + self.rolling_coeff * self.top_speed
        if abs(balance - self.accel_gain) > 0.01 * self.accel_gain:
            raise ValueError(
                "inconsistent top_speed: accel_gain must balance drag + rolling "
                f"at top speed (got {balance:.4f} vs {self.accel_gain:.4f})"
            )

    @classmethod
    def from_json(cls, path) -> "CarParams":
        with open(path, encoding="utf-8") as f:
            return cls(**json.load(f))


def road_wheel_angle_rad(command: ControlCommand, params: CarParams) -> float:
    deg = command.steer_deg / params.steer_ratio
    deg = min(params.max_road_wheel_deg, max(-params.max_road_wheel_deg, deg))
    return math.radians(deg)


def step(state: CarState, command: ControlCommand, params: CarParams, dt: float = DT) -> CarState:
    """Advance the car one fixed physics step.

    Kinematic bicycle: yaw rate = (v / wheelbase) * tan(road wheel angle);
    longitudinal accel superposes throttle, brake, quadratic drag and rolling
    resistance. Speed is clamped at zero (no reverse).
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    for v in (state.x, state.y, state.heading, state.speed,
              command.steer_deg, command.throttle, command.brake):
        if not math.isfinite(v):
            raise ValueError("non-finite input to step()")

    delta = road_wheel_angle_rad(command, params)
    heading = _wrap_pi(state.heading + (state.speed / params.wheelbase) * math.tan(delta) * dt)
    accel = (params.accel_gain * command.throttle
             - params.brake_gain * command.brake
             - params.drag_coeff * state.speed * state.speed
             - params.rolling_coeff * state.speed)
    speed = max(0.0, state.speed + accel * dt)
    return CarState(
        x=state.x + speed * math.cos(heading) * dt,
        y=state.y + speed * math.sin(heading) * dt,
        heading=heading,
        speed=speed,
        step_count=state.step_count + 1,
    )


def reset_to_track(state: CarState, track: trackmod.TrackSpec, s: float) -> CarState:
    """Place the car on the centerline at arc length s, at rest, heading
    along the track tangent. The simulation clock is preserved."""
    k = track.sample_s(s)
    px, py = track.centerline[k]
    return CarState(
        x=float(px),
        y=float(py),
        heading=_wrap_pi(trackmod.heading_at(track, s)),
        speed=0.0,
        step_count=state.step_count,
    )

"""Kinematic bicycle model (rear-axle reference) and its actuator commands."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Final

from geometry import Pose2D

if TYPE_CHECKING:
    from utils.types import Meters, Radians, Seconds


SUBSTEP: Final = 0.01
MAX_DT: Final = 0.05


@dataclass(frozen=True, slots=True)
class VehicleParams:
    wheelbase: Meters = 1.53
    max_steer: Radians = 0.52
    a_accel_max: float = 3.0
    a_brake_max: float = 6.0
    length: Meters = 2.9
    width: Meters = 1.4
    rear_overhang: Meters = 0.6
    steer_tau: Seconds = 0.0  # first-order steering lag; 0 disables

    def __post_init__(self) -> None:
        for name in ("wheelbase", "max_steer", "a_accel_max", "a_brake_max", "length", "width"):
            if getattr(self, name) <= 0:
                msg = f"vehicle.{name} must be positive"
                raise ValueError(msg)
        if self.steer_tau < 0:
            msg = "vehicle.steer_tau must be >= 0"
            raise ValueError(msg)


@dataclass(frozen=True, slots=True)
class ControlCommand:
    steering_angle: Radians = 0.0
    acceleration: float = 0.0
    timestamp: Seconds = 0.0

    def clamped(self, params: VehicleParams) -> ControlCommand:
        return ControlCommand(
            max(-params.max_steer, min(params.max_steer, self.steering_angle)),
            max(-params.a_brake_max, min(params.a_accel_max, self.acceleration)),
            self.timestamp,
        )


@dataclass(frozen=True, slots=True)
class VehicleState:
    pose: Pose2D = Pose2D()
    speed: float = 0.0
    yaw_rate: float = 0.0
    steering_angle: Radians = 0.0
    wheelbase: Meters = 1.53

    def front_axle(self) -> tuple[Meters, Meters]:
        return self.pose.to_ground(self.wheelbase, 0.0)


def _arc(pose: Pose2D, dist: float, curvature: float) -> Pose2D:
    """Advance `dist` along a constant-curvature arc."""
    if abs(curvature) < 1e-12:
        return Pose2D(pose.x + dist * math.cos(pose.heading), pose.y + dist * math.sin(pose.heading), pose.heading)
    dtheta = dist * curvature
    heading = pose.heading + dtheta
    return Pose2D(
        pose.x + (math.sin(heading) - math.sin(pose.heading)) / curvature,
        pose.y - (math.cos(heading) - math.cos(pose.heading)) / curvature,
        heading,
    )


def step_vehicle(
    state: VehicleState, cmd: ControlCommand, dt: Seconds, params: VehicleParams | None = None
) -> VehicleState:
    """Integrate the bicycle model over `dt` in <= 10 ms substeps.

    Within a substep steering and acceleration are constant, so position follows an
    exact arc; speed never goes negative (braking stops the car, it does not reverse).
    """
    if not 0 < dt <= MAX_DT:
        msg = f"dt must be in (0, {MAX_DT}], got {dt}"
        raise ValueError(msg)
    params = params or VehicleParams(wheelbase=state.wheelbase)
    cmd = cmd.clamped(params)

    pose, speed, steer = state.pose, state.speed, state.steering_angle
    n = max(1, math.ceil(dt / SUBSTEP - 1e-9))
    h = dt / n
    for _ in range(n):
        if params.steer_tau > 0:
            steer += (cmd.steering_angle - steer) * (1.0 - math.exp(-h / params.steer_tau))
        else:
            steer = cmd.steering_angle
        accel = cmd.acceleration
        t_stop = h if accel >= 0 or speed + accel * h >= 0 else speed / -accel
        dist = speed * t_stop + 0.5 * accel * t_stop * t_stop
        speed = max(0.0, speed + accel * h)
        if dist > 0:
            pose = _arc(pose, dist, math.tan(steer) / params.wheelbase)

    yaw_rate = speed * math.tan(steer) / params.wheelbase
    return VehicleState(pose, speed, yaw_rate, steer, params.wheelbase)


def footprint_hits_disc(state: VehicleState, params: VehicleParams, cx: Meters, cy: Meters, radius: Meters) -> bool:
    """Whether the vehicle rectangle intersects a disc (a cone's base) in the ground plane."""
    lx, ly = state.pose.to_local(cx, cy)
    x0, x1 = -params.rear_overhang, params.length - params.rear_overhang
    hw = params.width / 2
    nx, ny = min(max(lx, x0), x1), min(max(ly, -hw), hw)
    return math.hypot(lx - nx, ly - ny) <= radius


"""Path tracking (pure pursuit, Stanley), PID speed control and the mission supervisor."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Final, Literal

import numpy as np

from geometry import normalize_angle
from utils.types import Mission, MissionStatus
from vehicle import ControlCommand, VehicleParams

if TYPE_CHECKING:
    from geometry import FloatArray
    from planning import WaypointPath
    from utils.types import Meters, Radians, Seconds
    from vehicle import VehicleState

log = logging.getLogger(__name__)

V_SOFT: Final = 0.5

type ControllerName = Literal["pure_pursuit", "stanley"]


class ControlError(ValueError):
    pass


class PathExhausted(ControlError):
    pass


# ----------------------------------------------------------------------------------------------------------------------
# Path geometry


@dataclass(frozen=True, slots=True)
class PathProjection:
    segment: int
    s: Meters  # arc length of the projection
    point: tuple[Meters, Meters]
    cross_track: Meters  # positive with the query point left of the path
    heading: Radians  # path tangent at the projection


def _segments(points: FloatArray, *, closed: bool) -> tuple[FloatArray, FloatArray]:
    if closed:
        return points, np.roll(points, -1, axis=0)
    return points[:-1], points[1:]


def project_onto_path(points: FloatArray, x: float, y: float, *, closed: bool) -> PathProjection:
    """Nearest point on the polyline (segment-wise), with the signed lateral offset of (x, y)."""
    if points.shape[0] == 1:
        px, py = float(points[0, 0]), float(points[0, 1])
        return PathProjection(0, 0.0, (px, py), math.hypot(x - px, y - py), 0.0)
    a, b = _segments(points, closed=closed)
    d = b - a
    seg_len2 = np.maximum((d * d).sum(axis=1), 1e-18)
    t = np.clip(((x - a[:, 0]) * d[:, 0] + (y - a[:, 1]) * d[:, 1]) / seg_len2, 0.0, 1.0)
    proj = a + t[:, None] * d
    dist2 = (proj[:, 0] - x) ** 2 + (proj[:, 1] - y) ** 2
    i = int(np.argmin(dist2))
    seg_len = np.sqrt(seg_len2)
    s = float(seg_len[:i].sum() + t[i] * seg_len[i])
    heading = math.atan2(d[i, 1], d[i, 0])
    px, py = float(proj[i, 0]), float(proj[i, 1])
    side = d[i, 0] * (y - py) - d[i, 1] * (x - px)
    return PathProjection(i, s, (px, py), math.copysign(math.hypot(x - px, y - py), side), heading)


def _point_at(points: FloatArray, s: Meters, *, closed: bool) -> tuple[Meters, Meters]:
    pts = np.vstack([points, points[:1]]) if closed else points
    cum = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
    if closed:
        s = s % cum[-1]
    s = min(max(s, 0.0), float(cum[-1]))
    return float(np.interp(s, cum, pts[:, 0])), float(np.interp(s, cum, pts[:, 1]))


@dataclass(frozen=True, slots=True)
class TrackingError:
    cross_track: Meters
    heading_error: Radians  # path heading minus vehicle heading, in (-pi, pi]
    lookahead_point: tuple[Meters, Meters]


def tracking_error(state: VehicleState, path: WaypointPath, lookahead: Meters = 0.0) -> TrackingError:
    """Errors at the rear axle; raises PathExhausted when an open path has nothing left ahead."""
    pose = state.pose
    proj = project_onto_path(path.points, pose.x, pose.y, closed=path.closed)
    if not path.closed:
        end_x, _ = pose.to_local(float(path.points[-1, 0]), float(path.points[-1, 1]))
        if end_x <= 0.0:
            msg = "no path point lies ahead of the vehicle"
            raise PathExhausted(msg)
    target = _point_at(path.points, proj.s + lookahead, closed=path.closed)
    return TrackingError(proj.cross_track, normalize_angle(proj.heading - pose.heading), target)


# ----------------------------------------------------------------------------------------------------------------------
# Lateral


def _clamp(value: float, bound: float) -> float:
    return max(-bound, min(bound, value))


def pure_pursuit_steering(alpha: Radians, lookahead: Meters, wheelbase: Meters) -> Radians:
    return math.atan(wheelbase * 2.0 * math.sin(alpha) / lookahead)


def pure_pursuit(
    state: VehicleState,
    path: WaypointPath,
    k_lookahead: Seconds = 0.5,
    l_min: Meters = 2.0,
    params: VehicleParams | None = None,
    *,
    t: Seconds = 0.0,
) -> ControlCommand:
    """Steer the rear axle onto the path point an arc distance max(l_min, k * speed) ahead."""
    params = params or VehicleParams(wheelbase=state.wheelbase)
    ld = max(l_min, k_lookahead * state.speed)
    err = tracking_error(state, path, ld)
    lx, ly = state.pose.to_local(*err.lookahead_point)
    alpha = math.atan2(ly, lx) if (lx, ly) != (0.0, 0.0) else 0.0
    steer = pure_pursuit_steering(alpha, ld, state.wheelbase)
    return ControlCommand(_clamp(steer, params.max_steer), 0.0, t)


def stanley(
    state: VehicleState,
    path: WaypointPath,
    k_gain: float = 1.2,
    params: VehicleParams | None = None,
    *,
    v_soft: float = V_SOFT,
    t: Seconds = 0.0,
) -> ControlCommand:
    """Heading error plus atan(k e / (v + v_soft)), with e measured at the front axle."""
    params = params or VehicleParams(wheelbase=state.wheelbase)
    if state.speed < 0:
        msg = f"speed must be >= 0, got {state.speed}"
        raise ControlError(msg)
    err = tracking_error(state, path)
    fx, fy = state.front_axle()
    cross = project_onto_path(path.points, fx, fy, closed=path.closed).cross_track
    steer = err.heading_error - math.atan(k_gain * cross / (state.speed + v_soft))
    return ControlCommand(_clamp(steer, params.max_steer), 0.0, t)


# ----------------------------------------------------------------------------------------------------------------------
# Longitudinal


@dataclass(frozen=True, slots=True)
class PidGains:
    kp: float = 1.0
    ki: float = 0.2
    kd: float = 0.05
    integral_band: float = 0.5  # integrate only while |error| is below this


@dataclass(frozen=True, slots=True)
class PidState:
    integral: float = 0.0
    prev_measured: float | None = None


def pid_speed(
    target: float,
    measured: float,
    state: PidState,
    dt: Seconds,
    gains: PidGains | None = None,
    limits: tuple[float, float] = (-6.0, 3.0),
) -> tuple[float, PidState]:
    """PID on speed error with derivative on measurement; returns (acceleration, new state).

    The integrator only moves inside the error band and never while the output is
    saturated in the direction the error pushes.
    """
    if dt <= 0:
        msg = f"dt must be positive, got {dt}"
        raise ControlError(msg)
    gains = gains or PidGains()
    lo, hi = limits
    error = target - measured
    derivative = 0.0 if state.prev_measured is None else -(measured - state.prev_measured) / dt
    unsat = gains.kp * error + gains.ki * state.integral + gains.kd * derivative
    integral = state.integral
    saturated = (unsat >= hi and error > 0) or (unsat <= lo and error < 0)
    if abs(error) < gains.integral_band and not saturated:
        integral += error * dt
    out = gains.kp * error + gains.ki * integral + gains.kd * derivative
    return min(hi, max(lo, out)), PidState(integral, measured)


# ----------------------------------------------------------------------------------------------------------------------
# Supervisor


@dataclass(frozen=True, slots=True)
class SupervisorConfig:
    watchdog: Seconds = 0.5
    cov_trace_max: float = 2.0
    off_track_max: Meters = 3.0
    laps: dict[Mission, int] = field(
        default_factory=lambda: {
            Mission.TRACKDRIVE: 10,
            Mission.AUTOCROSS: 1,
            Mission.ACCELERATION: 1,
            Mission.SKIDPAD: 1,
        }
    )


@dataclass(frozen=True, slots=True)
class SupervisorContext:
    t: Seconds
    mission: Mission
    last_perception_t: Seconds
    pose_cov_trace: float
    off_track: Meters  # distance outside the track bounds, 0 when inside
    laps: int
    has_path: bool


def mission_supervisor(
    status: MissionStatus, ctx: SupervisorContext, config: SupervisorConfig | None = None
) -> MissionStatus:
    """Next mission status. EmergencyStop and Finishing are terminal."""
    config = config or SupervisorConfig()
    if status in {MissionStatus.EMERGENCY_STOP, MissionStatus.FINISHING}:
        return status
    reason = None
    if ctx.t - ctx.last_perception_t > config.watchdog:
        reason = f"no perception frame for {ctx.t - ctx.last_perception_t:.3f} s"
    elif ctx.pose_cov_trace > config.cov_trace_max:
        reason = f"pose covariance trace {ctx.pose_cov_trace:.3f} above {config.cov_trace_max}"
    elif ctx.off_track > config.off_track_max:
        reason = f"vehicle {ctx.off_track:.2f} m outside the track"
    if reason is not None:
        log.warning("t=%.2f: emergency stop, %s", ctx.t, reason)
        return MissionStatus.EMERGENCY_STOP

    new = status
    if status is MissionStatus.STARTING and ctx.has_path:
        new = MissionStatus.RACING
    if new is MissionStatus.RACING and ctx.laps >= config.laps.get(ctx.mission, 1):
        new = MissionStatus.FINISHING
    if new is not status:
        log.info("t=%.2f: mission %s -> %s", ctx.t, status, new)
    return new


def emergency_command(params: VehicleParams, t: Seconds = 0.0) -> ControlCommand:
    return ControlCommand(0.0, -params.a_brake_max, t)

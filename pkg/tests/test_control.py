from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest

from config import ControlConfig, PerceptionSettings, RunConfig
from control import (
    ControlError,
    PathExhausted,
    PidGains,
    PidState,
    SupervisorConfig,
    SupervisorContext,
    emergency_command,
    mission_supervisor,
    pid_speed,
    project_onto_path,
    pure_pursuit,
    pure_pursuit_steering,
    stanley,
    tracking_error,
)
from geometry import Pose2D
from harness import run_mission
from planning import WaypointPath
from utils.types import Mission, MissionStatus
from vehicle import ControlCommand, VehicleParams, VehicleState


@pytest.fixture(scope="module")
def straight() -> WaypointPath:
    return WaypointPath.from_points(np.column_stack([np.linspace(0, 50, 101), np.zeros(101)]))


# -- tracking ------------------------------------------------------------------------------------------------------


def test_projection_sign(straight):
    left = project_onto_path(straight.points, 5.2, 0.5, closed=False)
    right = project_onto_path(straight.points, 5.2, -0.5, closed=False)
    assert left.cross_track == pytest.approx(0.5)
    assert right.cross_track == pytest.approx(-0.5)
    assert left.s == pytest.approx(5.2)
    assert left.point == pytest.approx((5.2, 0.0))
    assert left.heading == pytest.approx(0.0)


def test_tracking_error_lookahead(straight):
    err = tracking_error(VehicleState(Pose2D(5.0, 0.2, 0.1)), straight, lookahead=4.0)
    assert err.cross_track == pytest.approx(0.2)
    assert err.heading_error == pytest.approx(-0.1)
    assert err.lookahead_point == pytest.approx((9.0, 0.0))


def test_path_exhausted(straight):
    with pytest.raises(PathExhausted):
        tracking_error(VehicleState(Pose2D(60.0, 0.0, 0.0)), straight)


# -- lateral -------------------------------------------------------------------------------------------------------


@pytest.mark.parametrize("controller", [pure_pursuit, stanley])
def test_on_path_gives_zero_steer(straight, controller):
    cmd = controller(VehicleState(Pose2D(5.0, 0.0, 0.0), speed=5.0), straight)
    assert cmd.steering_angle == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("controller", [pure_pursuit, stanley])
def test_steers_back_towards_path(straight, controller):
    left_of_path = controller(VehicleState(Pose2D(5.0, 0.5, 0.0), speed=5.0), straight)
    right_of_path = controller(VehicleState(Pose2D(5.0, -0.5, 0.0), speed=5.0), straight)
    assert left_of_path.steering_angle < 0
    assert right_of_path.steering_angle > 0
    assert left_of_path.steering_angle == pytest.approx(-right_of_path.steering_angle)


def test_pure_pursuit_law():
    assert pure_pursuit_steering(0.0, 5.0, 1.53) == 0.0
    assert pure_pursuit_steering(0.3, 5.0, 1.53) == pytest.approx(math.atan(2 * 1.53 * math.sin(0.3) / 5.0))


def test_steering_is_clamped(straight):
    params = VehicleParams()
    cmd = stanley(VehicleState(Pose2D(5.0, 5.0, 0.0), speed=0.0), straight, params=params)
    assert cmd.steering_angle == pytest.approx(-params.max_steer)


def test_stanley_rejects_reverse(straight):
    with pytest.raises(ControlError, match="speed"):
        stanley(VehicleState(Pose2D(5.0, 0.0, 0.0), speed=-1.0), straight)


def test_closed_path_never_exhausts():
    a = np.linspace(0, 2 * math.pi, 120, endpoint=False)
    circle = WaypointPath.from_points(np.column_stack([10 * np.cos(a), 10 * np.sin(a)]), closed=True)
    cmd = pure_pursuit(VehicleState(Pose2D(10.0, 0.0, math.pi / 2), speed=5.0), circle)
    assert cmd.steering_angle > 0


# -- speed ---------------------------------------------------------------------------------------------------------


def test_pid_step_response():
    dt, v, state = 0.02, 0.0, PidState()
    accel, state = pid_speed(10.0, v, state, dt)
    assert accel == 3.0
    assert state.integral == 0.0
    peak = 0.0
    for _ in range(2000):
        v += accel * dt
        peak = max(peak, v)
        accel, state = pid_speed(10.0, v, state, dt)
    assert peak <= 11.0
    assert v == pytest.approx(10.0, abs=0.05)


def test_pid_braking_limit():
    accel, _ = pid_speed(0.0, 20.0, PidState(), 0.02)
    assert accel == -6.0


def test_pid_integrates_inside_band():
    gains = PidGains(kp=0.0, ki=1.0, kd=0.0)
    _, state = pid_speed(10.2, 10.0, PidState(), 0.1, gains)
    assert state.integral == pytest.approx(0.02)
    _, state = pid_speed(12.0, 10.0, state, 0.1, gains)
    assert state.integral == pytest.approx(0.02)


def test_pid_rejects_bad_dt():
    with pytest.raises(ControlError, match="dt"):
        pid_speed(1.0, 0.0, PidState(), 0.0)


# -- supervisor ----------------------------------------------------------------------------------------------------


def _ctx(**overrides):
    base = {
        "t": 1.0,
        "mission": Mission.TRACKDRIVE,
        "last_perception_t": 0.95,
        "pose_cov_trace": 0.1,
        "off_track": 0.0,
        "laps": 0,
        "has_path": True,
    }
    return SupervisorContext(**(base | overrides))


@pytest.mark.parametrize(
    ("status", "overrides", "expected"),
    [
        (MissionStatus.STARTING, {"has_path": False}, MissionStatus.STARTING),
        (MissionStatus.STARTING, {}, MissionStatus.RACING),
        (MissionStatus.RACING, {"laps": 9}, MissionStatus.RACING),
        (MissionStatus.RACING, {"laps": 10}, MissionStatus.FINISHING),
        (MissionStatus.RACING, {"mission": Mission.AUTOCROSS, "laps": 1}, MissionStatus.FINISHING),
        (MissionStatus.RACING, {"last_perception_t": 0.4}, MissionStatus.EMERGENCY_STOP),
        (MissionStatus.RACING, {"pose_cov_trace": 2.5}, MissionStatus.EMERGENCY_STOP),
        (MissionStatus.STARTING, {"off_track": 3.5}, MissionStatus.EMERGENCY_STOP),
        (MissionStatus.EMERGENCY_STOP, {}, MissionStatus.EMERGENCY_STOP),
        (MissionStatus.FINISHING, {"pose_cov_trace": 9.0}, MissionStatus.FINISHING),
    ],
)
def test_supervisor_transitions(status, overrides, expected):
    assert mission_supervisor(status, _ctx(**overrides)) is expected


def test_emergency_command():
    cmd = emergency_command(VehicleParams(), t=2.5)
    assert cmd.steering_angle == 0.0
    assert cmd.acceleration == -6.0
    assert cmd.timestamp == 2.5


# -- properties ----------------------------------------------------------------------------------------------------


def _mirror(state: VehicleState) -> VehicleState:
    pose = state.pose
    return replace(state, pose=Pose2D(pose.x, -pose.y, -pose.heading))


@pytest.mark.parametrize("controller", [pure_pursuit, stanley])
def test_steering_is_odd_under_reflection(controller):
    x = np.linspace(0.0, 60.0, 121)
    points = np.column_stack([x, 2.0 * np.sin(x / 8.0)])
    path = WaypointPath.from_points(points)
    mirrored = WaypointPath.from_points(points * np.array([1.0, -1.0]))
    rng = np.random.default_rng(11)
    for _ in range(200):
        px = rng.uniform(5.0, 35.0)
        pose = Pose2D(px, 2.0 * math.sin(px / 8.0) + rng.uniform(-1.0, 1.0), rng.uniform(-0.5, 0.5))
        state = VehicleState(pose, speed=rng.uniform(0.0, 15.0))
        steer = controller(state, path).steering_angle
        assert controller(_mirror(state), mirrored).steering_angle == pytest.approx(-steer, abs=1e-9)


def test_commands_respect_bounds():
    a = np.linspace(0, 2 * math.pi, 120, endpoint=False)
    circle = WaypointPath.from_points(np.column_stack([15 * np.cos(a), 15 * np.sin(a)]), closed=True)
    params = VehicleParams()
    limits = (-params.a_brake_max, params.a_accel_max)
    rng = np.random.default_rng(2024)
    pid = PidState()
    for i in range(10_000):
        x, y = rng.uniform(-25.0, 25.0, 2)
        state = VehicleState(Pose2D(x, y, rng.uniform(-math.pi, math.pi)), speed=rng.uniform(0.0, 30.0))
        controller = pure_pursuit if i % 2 else stanley
        cmd = controller(state, circle, params=params, t=0.01 * i)
        accel, pid = pid_speed(rng.uniform(0.0, 30.0), state.speed, pid, 0.02, limits=limits)
        cmd = ControlCommand(cmd.steering_angle, accel, cmd.timestamp)
        assert math.isfinite(cmd.steering_angle)
        assert math.isfinite(cmd.acceleration)
        assert abs(cmd.steering_angle) <= params.max_steer
        assert limits[0] <= cmd.acceleration <= limits[1]
        assert cmd.clamped(params) == cmd


@pytest.mark.slow
def test_pure_pursuit_tracks_tighter_than_stanley():
    base = RunConfig(
        mission=Mission.TRACKDRIVE,
        seed=42,
        noise_off=True,
        time_cap_s=120.0,
        perception=PerceptionSettings(calibrate_mono=False),
        control=ControlConfig(supervisor=SupervisorConfig(laps={Mission.TRACKDRIVE: 1})),
    )
    error = {
        name: run_mission(replace(base, controller=name)).summary["mean_abs_cross_track_m"]
        for name in ("pure_pursuit", "stanley")
    }
    assert 0.0 < error["pure_pursuit"] < error["stanley"]

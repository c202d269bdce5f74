from __future__ import annotations

import math

import pytest

from geometry import Pose2D
from vehicle import ControlCommand, VehicleParams, VehicleState, footprint_hits_disc, step_vehicle


def test_straight_line():
    out = step_vehicle(VehicleState(Pose2D(), speed=5.0), ControlCommand(0.0, 0.0), 0.05)
    out = step_vehicle(out, ControlCommand(0.0, 0.0), 0.05)
    assert (out.pose.x, out.pose.y) == pytest.approx((0.5, 0.0), abs=1e-12)
    assert out.pose.heading == 0.0
    assert out.speed == 5.0


def test_zero_speed_does_not_move():
    state = VehicleState(Pose2D(1.0, 2.0, 0.3))
    out = step_vehicle(state, ControlCommand(0.4, 0.0), 0.05)
    assert out.pose == state.pose


def test_turning_radius():
    params = VehicleParams()
    steer = 0.3
    radius = params.wheelbase / math.tan(steer)
    state = VehicleState(Pose2D(), speed=4.0, steering_angle=steer)
    cmd = ControlCommand(steer, 0.0)
    n = round(2 * math.pi * radius / 4.0 / 0.01)
    cx, cy = 0.0, radius
    worst = 0.0
    for _ in range(n):
        state = step_vehicle(state, cmd, 0.01, params)
        worst = max(worst, abs(math.hypot(state.pose.x - cx, state.pose.y - cy) - radius) / radius)
    assert worst < 1e-3


def test_commands_are_clamped():
    params = VehicleParams()
    out = step_vehicle(VehicleState(Pose2D(), speed=3.0), ControlCommand(2.0, 50.0), 0.01, params)
    assert out.steering_angle == params.max_steer
    assert out.speed == pytest.approx(3.0 + params.a_accel_max * 0.01)


def test_braking_stops_without_reversing():
    out = VehicleState(Pose2D(), speed=0.1)
    for _ in range(10):
        out = step_vehicle(out, ControlCommand(0.0, -6.0), 0.05)
    assert out.speed == 0.0
    assert out.pose.x == pytest.approx(0.1**2 / (2 * 6.0))


@pytest.mark.parametrize("dt", [0.0, -0.01, 0.06])
def test_dt_bounds(dt):
    with pytest.raises(ValueError, match="dt must be"):
        step_vehicle(VehicleState(), ControlCommand(), dt)


def test_footprint_hit():
    params = VehicleParams()
    state = VehicleState(Pose2D())
    assert footprint_hits_disc(state, params, 1.0, 0.0, 0.1)
    assert footprint_hits_disc(state, params, 1.0, 0.75, 0.1)
    assert not footprint_hits_disc(state, params, 1.0, 1.0, 0.1)
    assert not footprint_hits_disc(state, params, 2.5, 0.0, 0.1)

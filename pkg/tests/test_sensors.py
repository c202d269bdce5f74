from __future__ import annotations

import math

import numpy as np
import pytest

from geometry import Pose2D, cone_geometry, project_points
from sensors import (
    DetectorNoise,
    LidarNoise,
    LidarParams,
    OdomNoise,
    box_from_bounds,
    cone_pose_in_camera,
    lidar_to_ground_frame,
    mark_occlusions,
    simulate_lidar,
    simulate_odometry,
    simulate_stereo_detector,
)
from track import TrackCone, TrackDefinition
from utils.types import ConeClass, ConeQuality, Mission
from vehicle import VehicleState


def _world(*cones: TrackCone) -> TrackDefinition:
    return TrackDefinition(Mission.AUTOCROSS, cones, Pose2D(), 3.0)


# -- odometry ------------------------------------------------------------------------------------------------------


def test_odometry_noise_off_is_truth():
    truth = VehicleState(Pose2D(), speed=4.2, yaw_rate=0.3)
    sample = simulate_odometry(truth, OdomNoise.off(), 1.5, np.random.default_rng(0))
    assert (sample.speed, sample.yaw_rate, sample.timestamp) == (4.2, 0.3, 1.5)
    assert not sample.noisy


def test_odometry_bias():
    sample = simulate_odometry(VehicleState(speed=4.0), OdomNoise(0.0, 0.0, bias_v=0.1), 0.0)
    assert sample.speed == pytest.approx(4.1)


def test_odometry_noise_mean():
    rng = np.random.default_rng(5)
    noise = OdomNoise()
    speeds = [simulate_odometry(VehicleState(speed=3.0), noise, 0.0, rng).speed for _ in range(10_000)]
    assert abs(np.mean(speeds) - 3.0) < 3 * noise.sigma_v / math.sqrt(10_000)


# -- lidar ---------------------------------------------------------------------------------------------------------


def test_lidar_flat_ground(lidar):
    cloud = simulate_lidar(_world(), VehicleState(), lidar, LidarNoise.off())
    assert len(cloud) > 0
    ground = lidar_to_ground_frame(cloud, VehicleState(), lidar)
    np.testing.assert_allclose(ground[:, 2], 0.0, atol=1e-9)
    assert cloud.ring.max() <= 7  # upward rings never reach the ground


def test_lidar_cone_returns(lidar):
    cone = TrackCone(lidar.mount[0] + 5.0, 0.0, ConeClass.BLUE)
    cloud = simulate_lidar(_world(cone), VehicleState(), lidar, LidarNoise.off())
    ground = lidar_to_ground_frame(cloud, VehicleState(), lidar)
    on_cone = ground[ground[:, 2] > 1e-6]
    assert len(on_cone) >= 1
    geom = cone_geometry(ConeClass.BLUE)
    radial = np.hypot(on_cone[:, 0] - cone.x, on_cone[:, 1] - cone.y)
    assert np.all(radial <= geom.base_radius + 1e-9)
    assert np.all(on_cone[:, 2] <= geom.height + 1e-9)


def test_lidar_fallen_cone_lies_across_the_line_of_sight(lidar):
    cone = TrackCone(lidar.mount[0] + 5.0, 0.0, ConeClass.BLUE, fallen=True)
    cloud = simulate_lidar(_world(cone), VehicleState(), lidar, LidarNoise.off())
    ground = lidar_to_ground_frame(cloud, VehicleState(), lidar)
    on_cone = ground[ground[:, 2] > 1e-6]
    assert len(on_cone) >= 3
    geom = cone_geometry(ConeClass.BLUE)
    # base disc at the cone position, tip towards the sensor's left
    assert np.all(on_cone[:, 1] >= cone.y - 1e-9)
    assert on_cone[:, 1].max() > geom.base_width
    assert np.all(on_cone[:, 2] <= geom.base_width + 1e-9)
    radial = np.hypot(on_cone[:, 0] - cone.x, on_cone[:, 2] - geom.base_radius)
    assert np.all(radial <= geom.base_radius + 1e-9)


def test_lidar_and_camera_share_the_fallen_pose(rig, lidar):
    world = _world(TrackCone(rig.mount[0] + 5.0, rig.mount[1] + 0.5, ConeClass.YELLOW, fallen=True))
    cloud = simulate_lidar(world, VehicleState(), lidar, LidarNoise.off(), view_from=rig.mount[:2])
    on_cone = cloud.xyz[lidar_to_ground_frame(cloud, VehicleState(), lidar)[:, 2] > 1e-6]
    assert len(on_cone) > 0
    (box,) = simulate_stereo_detector(world, VehicleState(), rig, DetectorNoise.off()).boxes
    assert box.quality is ConeQuality.FALLEN
    uv, _ = project_points(rig.lidar_to_camera(lidar).apply(on_cone), rig.intrinsics)
    assert np.all((uv[:, 0] >= box.left - 1) & (uv[:, 0] <= box.right + 1))
    assert np.all((uv[:, 1] >= box.top - 1) & (uv[:, 1] <= box.bottom + 1))


def test_lidar_far_cone_is_starved(lidar):
    cone = TrackCone(lidar.mount[0] + 25.0, 0.0, ConeClass.YELLOW)
    cloud = simulate_lidar(_world(cone), VehicleState(), lidar, LidarNoise.off())
    ground = lidar_to_ground_frame(cloud, VehicleState(), lidar)
    assert len(set(cloud.ring[ground[:, 2] > 1e-6].tolist())) <= 1


def test_lidar_range_cap_monotone(lidar):
    cones = [TrackCone(float(x), float(y), ConeClass.BLUE) for x in range(3, 30, 4) for y in (-1.5, 1.5)]
    counts = [
        len(simulate_lidar(_world(*cones), VehicleState(), LidarParams(max_range=r), LidarNoise.off()))
        for r in (30.0, 20.0, 10.0, 5.0)
    ]
    assert counts == sorted(counts, reverse=True)


def test_lidar_is_deterministic(lidar, trackdrive_track):
    vehicle = VehicleState(trackdrive_track.start_pose)
    a = simulate_lidar(trackdrive_track, vehicle, lidar, LidarNoise(), np.random.default_rng(3))
    b = simulate_lidar(trackdrive_track, vehicle, lidar, LidarNoise(), np.random.default_rng(3))
    np.testing.assert_array_equal(a.xyz, b.xyz)


# -- detector ------------------------------------------------------------------------------------------------------


def test_on_axis_box_is_centered(rig):
    cone = TrackCone(rig.mount[0] + 10.0, rig.mount[1], ConeClass.YELLOW)
    out = simulate_stereo_detector(_world(cone), VehicleState(), rig, DetectorNoise.off())
    assert len(out.boxes) == 1
    assert abs(out.boxes[0].u - rig.intrinsics.cx) <= 0.5
    assert out.depths[0] == pytest.approx(10.0)


def test_noise_free_keypoints_match_projection(rig):
    cone = TrackCone(8.0, 1.2, ConeClass.ORANGE_BIG)
    out = simulate_stereo_detector(_world(cone), VehicleState(), rig, DetectorNoise.off())
    pose = cone_pose_in_camera(cone, VehicleState(), rig)
    expected, _ = project_points(pose.apply(cone_geometry(cone.cls).canonical_keypoints), rig.intrinsics)
    np.testing.assert_allclose(out.boxes[0].keypoints, expected, atol=1e-9)
    assert out.boxes[0].quality is ConeQuality.GOOD
    assert out.boxes[0].cone_id == 0


def test_fallen_cone_quality(rig):
    cone = TrackCone(8.0, 0.0, ConeClass.BLUE, fallen=True)
    out = simulate_stereo_detector(_world(cone), VehicleState(), rig, DetectorNoise.off())
    assert out.boxes[0].quality is ConeQuality.FALLEN


def test_occlusion_marks_rear_cone():
    front = box_from_bounds((100.0, 100.0, 200.0, 200.0), ConeClass.BLUE)
    rear = box_from_bounds((140.0, 100.0, 240.0, 200.0), ConeClass.BLUE)  # 60 % covered by `front`
    marked = mark_occlusions([front, rear], [5.0, 7.0], 0.5)
    assert marked[0].quality is ConeQuality.GOOD
    assert marked[1].quality is ConeQuality.PARTIALLY_VISIBLE


def test_miss_probability_curve():
    noise = DetectorNoise()
    assert noise.miss_probability(10.0) == 0.0
    assert noise.miss_probability(20.0) == pytest.approx(0.1)
    assert noise.miss_probability(500.0) == noise.miss_cap


def test_boxes_stay_inside_image(rig, trackdrive_track):
    rng = np.random.default_rng(11)
    line = np.asarray(trackdrive_track.centerline)
    k = rig.intrinsics
    for i in rng.integers(0, len(line) - 1, size=40):
        heading = math.atan2(*(line[i + 1] - line[i])[::-1]) + rng.normal(0.0, 0.3)
        vehicle = VehicleState(Pose2D(*line[i], heading))
        out = simulate_stereo_detector(trackdrive_track, vehicle, rig, DetectorNoise(), rng)
        for box in out.boxes:
            assert box.w > 0
            assert box.h > 0
            assert box.left >= -1e-9
            assert box.top >= -1e-9
            assert box.right <= k.image_width + 1e-9
            assert box.bottom <= k.image_height + 1e-9

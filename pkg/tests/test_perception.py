from __future__ import annotations

import math

import numpy as np
import pytest

from geometry import PointCloud, Pose2D, project_points
from lidar import LidarTierParams
from perception import PerceptionConfig, PerceptionFrame, calibrate_mono, three_tier_pipeline
from sensors import DetectorNoise, LidarNoise, lidar_to_ground_frame, simulate_lidar, simulate_stereo_detector
from track import TrackCone, TrackDefinition
from utils.types import ConeClass, Mission, SourceTier
from vehicle import VehicleState
from vision import StereoNoise

TIERS = {t.value for t in SourceTier}


def _frame(world, vehicle, rig, lidar, *, lidar_noise=None, detector_noise=None, rng=None):
    cloud = simulate_lidar(world, vehicle, lidar, lidar_noise or LidarNoise.off(), rng, view_from=rig.mount[:2])
    detections = simulate_stereo_detector(world, vehicle, rig, detector_noise or DetectorNoise.off(), rng)
    return PerceptionFrame(0.0, cloud, 0.0, detections)


def _single(rig, distance, *, fallen=False, bearing=0.0):
    x = rig.mount[0] + distance * math.cos(bearing)
    y = rig.mount[1] + distance * math.sin(bearing)
    return TrackDefinition(Mission.AUTOCROSS, (TrackCone(x, y, ConeClass.YELLOW, fallen),), Pose2D(), 3.0)


@pytest.fixture(scope="module")
def quiet_config():
    return PerceptionConfig(stereo_noise=StereoNoise.off())


@pytest.mark.parametrize(
    ("distance", "fallen", "tier"),
    [
        (5.0, False, SourceTier.LIDAR_FUSION),
        (25.0, False, SourceTier.MONOCULAR),
        (25.0, True, SourceTier.STEREO),
    ],
)
def test_routing_by_visibility_and_quality(rig, lidar, quiet_config, distance, fallen, tier):
    frame = _frame(_single(rig, distance, fallen=fallen), VehicleState(Pose2D()), rig, lidar)
    result = three_tier_pipeline(frame, quiet_config, rig, lidar)
    assert result.routes == (tier.value,)
    (obs,) = result.observations
    assert obs.source_tier is tier
    assert obs.cls is ConeClass.YELLOW


def test_lidar_tier_depth_is_mean_of_box_points(rig, lidar, quiet_config):
    frame = _frame(_single(rig, 6.0, bearing=0.15), VehicleState(Pose2D()), rig, lidar)
    result = three_tier_pipeline(frame, quiet_config, rig, lidar)
    heights = lidar_to_ground_frame(frame.cloud, VehicleState(Pose2D()), lidar)[:, 2]
    cam = rig.lidar_to_camera(lidar).apply(frame.cloud.xyz[heights > quiet_config.lidar.ground_threshold])
    uv, _ = project_points(cam, rig.intrinsics)
    (box,) = frame.detections.boxes
    (obs,) = result.observations
    assert obs.depth == pytest.approx(cam[box.contains(uv), 2].mean(), rel=1e-9)
    (truth,) = frame.detections.depths
    assert abs(obs.depth - truth) / truth < 0.03


def test_axis_corrected_lidar_tier_accuracy(rig, lidar):
    config = PerceptionConfig(LidarTierParams(axis_correction=True), stereo_noise=StereoNoise.off())
    frame = _frame(_single(rig, 6.0, bearing=0.15), VehicleState(Pose2D()), rig, lidar)
    result = three_tier_pipeline(frame, config, rig, lidar)
    (truth,) = frame.detections.depths
    assert abs(result.observations[0].depth - truth) / truth < 0.01
    assert result.plane is not None
    assert result.plane.normal[2] == pytest.approx(1.0, abs=1e-6)


def test_routing_is_exhaustive(trackdrive_track, rig, lidar):
    rng = np.random.default_rng(3)
    vehicle = VehicleState(trackdrive_track.start_pose)
    frame = _frame(
        trackdrive_track, vehicle, rig, lidar, lidar_noise=LidarNoise(), detector_noise=DetectorNoise(), rng=rng
    )
    result = three_tier_pipeline(frame, PerceptionConfig(), rig, lidar, rng)
    boxes = frame.detections.boxes
    assert len(boxes) > 0
    assert len(result.routes) == len(boxes)
    for route in result.routes:
        assert route in TIERS or route.startswith("drop:")
    kept = [r for r in result.routes if r in TIERS]
    assert len(result.observations) == len(kept)
    assert [o.source_tier.value for o in result.observations] == kept


def test_empty_frame(rig, lidar):
    empty = TrackDefinition(Mission.AUTOCROSS, (), Pose2D(), 3.0)
    detections = simulate_stereo_detector(empty, VehicleState(), rig, DetectorNoise.off())
    frame = PerceptionFrame(0.0, PointCloud.empty(), 0.0, detections)
    result = three_tier_pipeline(frame, PerceptionConfig(), rig, lidar)
    assert result.observations == ()
    assert result.routes == ()
    assert result.plane is None


def test_frame_timestamp():
    frame = PerceptionFrame(1.0, PointCloud.empty(), 1.005, None)  # type: ignore[arg-type]
    assert frame.timestamp == 1.005


@pytest.mark.slow
def test_calibrated_mono_curve(rig):
    curves = calibrate_mono(rig)
    assert set(curves) == set(ConeClass)
    for curve in curves.values():
        assert curve.b < 0
    frame_box, *_ = simulate_stereo_detector(
        _single(rig, 8.0), VehicleState(Pose2D()), rig, DetectorNoise.off()
    ).boxes
    depth = curves[ConeClass.YELLOW].depth(frame_box.h / rig.intrinsics.image_height)
    assert depth == pytest.approx(8.0, rel=0.1)

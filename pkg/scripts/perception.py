"""Three-tier cone depth estimation: LiDAR fusion first, then monocular for good cones, stereo for the rest."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from geometry import GeometryError, Pose2D
from lidar import (
    ClusterSet,
    LidarTierParams,
    Plane3D,
    dbscan_cluster,
    filter_cone_clusters,
    fuse_lidar_camera,
    ransac_ground_removal,
)
from observation import InsufficientPoints, NoPlaneFound, PerceptionError
from sensors import DetectorNoise, simulate_stereo_detector
from track import TrackCone, TrackDefinition
from utils.types import ConeClass, ConeQuality, Mission, SourceTier
from vehicle import VehicleState
from vision import MonoCurve, StereoMode, StereoNoise, mono_depth_from_box, refit_mono_curve, stereo_depth

if TYPE_CHECKING:
    from geometry import PointCloud
    from observation import ConeObservation
    from sensors import CameraRig, DetectorOutput, LidarParams
    from utils.types import Seconds


log = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class PerceptionFrame:
    """A LiDAR sweep and a camera detection set close enough in time to fuse."""

    t_lidar: Seconds
    cloud: PointCloud
    t_camera: Seconds
    detections: DetectorOutput

    @property
    def timestamp(self) -> Seconds:
        return max(self.t_lidar, self.t_camera)


@dataclass(frozen=True, slots=True)
class PerceptionConfig:
    lidar: LidarTierParams = field(default_factory=LidarTierParams)
    mono: dict[ConeClass, MonoCurve] = field(default_factory=lambda: dict.fromkeys(ConeClass, MonoCurve()))
    stereo_mode: StereoMode = field(default_factory=StereoMode)
    stereo_noise: StereoNoise = field(default_factory=StereoNoise)


@dataclass(frozen=True, slots=True)
class TierResult:
    observations: tuple[ConeObservation, ...]
    routes: tuple[str, ...]  # per input box: a tier name or "drop:<reason>"
    plane: Plane3D | None = None


def _ground(
    cloud: PointCloud, params: LidarTierParams, lidar: LidarParams, rng: np.random.Generator | None
) -> tuple[Plane3D, PointCloud]:
    try:
        return ransac_ground_removal(cloud, params.ground_threshold, params.ransac_iters, rng)
    except (NoPlaneFound, InsufficientPoints) as e:
        log.info("ground removal skipped (%s); using the nominal plane and the full cloud", e)
        return Plane3D((0.0, 0.0, 1.0), lidar.mount[2], 0), cloud


def three_tier_pipeline(
    frame: PerceptionFrame,
    config: PerceptionConfig,
    rig: CameraRig,
    lidar: LidarParams,
    rng: np.random.Generator | None = None,
) -> TierResult:
    """Route every box to exactly one tier (or a logged drop); output follows the canonical box order."""
    k = rig.intrinsics
    c2v = rig.camera_to_vehicle()
    boxes = frame.detections.boxes
    routes: list[str] = [""] * len(boxes)
    by_box: dict[int, ConeObservation] = {}

    plane, cone_clusters = None, ClusterSet(())
    if len(frame.cloud):
        plane, rest = _ground(frame.cloud, config.lidar, lidar, rng)
        clusters = dbscan_cluster(rest, config.lidar.eps, config.lidar.min_pts)
        cone_clusters = filter_cone_clusters(
            clusters,
            rest,
            plane,
            h_min=config.lidar.h_min,
            h_max=config.lidar.h_max,
            max_footprint=config.lidar.max_footprint,
        )
        frame_cloud = rest
    else:
        frame_cloud = frame.cloud

    observations, unmatched = fuse_lidar_camera(
        cone_clusters,
        frame_cloud,
        boxes,
        rig.lidar_to_camera(lidar),
        k,
        c2v,
        plane=plane if config.lidar.axis_correction else None,
        statistic=config.lidar.statistic,
    )
    unmatched_set = set(unmatched)
    matched = [b for b in range(len(boxes)) if b not in unmatched_set]
    for b, obs in zip(matched, observations, strict=True):
        by_box[b] = obs
        routes[b] = SourceTier.LIDAR_FUSION.value

    for b in unmatched:
        box = boxes[b]
        try:
            if box.quality is ConeQuality.GOOD:
                by_box[b] = mono_depth_from_box(box, k, config.mono, c2v)
            else:
                by_box[b] = stereo_depth(
                    box,
                    frame.detections.truth[b],
                    k,
                    rig.baseline,
                    c2v,
                    mode=config.stereo_mode,
                    noise=config.stereo_noise,
                    rng=rng,
                ).observation
            routes[b] = by_box[b].source_tier.value
        except (PerceptionError, GeometryError) as e:
            routes[b] = f"drop:{type(e).__name__}"
            log.debug("box %d (%s, %s) dropped: %s", b, box.cls, box.quality, e)

    ordered = tuple(by_box[b] for b in sorted(by_box))
    return TierResult(ordered, tuple(routes), plane)


def calibrate_mono(rig: CameraRig, *, distances: tuple[float, ...] | None = None) -> dict[ConeClass, MonoCurve]:
    """Refit the box-height power law per cone class against this camera, from noise-free detections."""
    distances = distances or tuple(np.linspace(2.0, 30.0, 57))
    curves: dict[ConeClass, MonoCurve] = {}
    vehicle = VehicleState(Pose2D())
    cam_x = rig.mount[0]
    for cls in ConeClass:
        samples = []
        for bearing in (-0.3, 0.0, 0.3):
            cones = tuple(
                TrackCone(cam_x + d * math.cos(bearing), rig.mount[1] + d * math.sin(bearing), cls) for d in distances
            )
            for cone in cones:
                world = TrackDefinition(Mission.AUTOCROSS, (cone,), Pose2D(), 3.0)
                out = simulate_stereo_detector(world, vehicle, rig, DetectorNoise.off())
                h_img = rig.intrinsics.image_height
                samples += [(box.h / h_img, z) for box, z in zip(out.boxes, out.depths, strict=True)]
        curves[cls] = refit_mono_curve(samples)
        log.debug("mono curve %s: a=%.4f b=%.4f (%d samples)", cls, curves[cls].a, curves[cls].b, len(samples))
    return curves

"""LiDAR tier: ground removal, clustering, cone filtering and LiDAR-camera depth fusion."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Final, Literal

import numpy as np
from scipy.spatial.distance import pdist
from sklearn.cluster import DBSCAN

from geometry import cone_geometry, project_points
from observation import InsufficientPoints, NoPlaneFound, observation_from_box
from utils.types import ConeQuality, SourceTier

if TYPE_CHECKING:
    from geometry import CameraIntrinsics, FloatArray, PointCloud, RigidTransform3D
    from observation import ConeObservation
    from sensors import DetectedBox
    from utils.types import Meters, Uint


log = logging.getLogger(__name__)

MIN_INLIER_RATIO: Final = 0.2

type DepthStatistic = Literal["mean", "median"]


@dataclass(frozen=True, slots=True)
class Plane3D:
    """`normal . p + offset = 0`, normal pointing up (non-negative z)."""

    normal: tuple[float, float, float]
    offset: Meters
    inliers: Uint

    @classmethod
    def through(cls, normal: FloatArray, point: FloatArray, inliers: int = 0) -> Plane3D:
        n = np.asarray(normal, dtype=float)
        n = n / np.linalg.norm(n)
        if n[2] < 0:
            n = -n
        return cls((float(n[0]), float(n[1]), float(n[2])), float(-n @ point), inliers)

    def signed_distance(self, xyz: FloatArray) -> FloatArray:
        return np.asarray(xyz) @ np.asarray(self.normal) + self.offset


@dataclass(frozen=True, slots=True)
class ClusterSet:
    clusters: tuple[tuple[int, ...], ...]
    noise: tuple[int, ...] = field(default=())

    def indices(self) -> list[int]:
        return sorted([i for c in self.clusters for i in c] + list(self.noise))


@dataclass(frozen=True, slots=True)
class LidarTierParams:
    ground_threshold: Meters = 0.05
    ransac_iters: int = 200
    eps: Meters = 0.3
    min_pts: int = 2
    h_min: Meters = 0.15
    h_max: Meters = 0.60
    max_footprint: Meters = 0.5
    statistic: DepthStatistic = "mean"
    axis_correction: bool = False


def _fit_plane(points: FloatArray) -> tuple[FloatArray, FloatArray]:
    centroid = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - centroid)
    return vt[-1], centroid


def ransac_ground_removal(
    cloud: PointCloud,
    threshold: Meters = 0.05,
    max_iters: int = 200,
    rng: np.random.Generator | None = None,
) -> tuple[Plane3D, PointCloud]:
    """Fit the ground plane by 3-point RANSAC and return it with the non-ground points.

    The best hypothesis is refit to its inliers by least squares; the refit is kept
    only when it does not lose inliers.
    """
    n = len(cloud)
    if n < 3:  # noqa: PLR2004
        msg = f"need >= 3 points for a plane, got {n}"
        raise InsufficientPoints(msg)
    rng = rng if rng is not None else np.random.default_rng(0)
    xyz = cloud.xyz

    best_count, best_plane = -1, None
    for _ in range(max_iters):
        p1, p2, p3 = xyz[rng.choice(n, 3, replace=False)]
        normal = np.cross(p2 - p1, p3 - p1)
        norm = np.linalg.norm(normal)
        if norm < 1e-12:
            continue
        plane = Plane3D.through(normal / norm, p1)
        count = int(np.count_nonzero(np.abs(plane.signed_distance(xyz)) <= threshold))
        if count > best_count:
            best_count, best_plane = count, plane

    if best_plane is None or best_count < MIN_INLIER_RATIO * n:
        msg = f"best plane has {max(best_count, 0)}/{n} inliers (< {MIN_INLIER_RATIO:.0%})"
        raise NoPlaneFound(msg)

    inliers = np.abs(best_plane.signed_distance(xyz)) <= threshold
    refit = Plane3D.through(*_fit_plane(xyz[inliers]))
    refit_inliers = np.abs(refit.signed_distance(xyz)) <= threshold
    if np.count_nonzero(refit_inliers) >= best_count:
        best_plane, inliers = refit, refit_inliers
    plane = Plane3D(best_plane.normal, best_plane.offset, int(np.count_nonzero(inliers)))
    return plane, cloud.subset(np.flatnonzero(~inliers))


def dbscan_cluster(cloud: PointCloud, eps: Meters = 0.3, min_pts: int = 2) -> ClusterSet:
    """Density clusters in 3-D; labels follow point order, so results are deterministic for a fixed cloud."""
    if eps <= 0 or min_pts < 1:
        msg = f"need eps > 0 and min_pts >= 1 (eps={eps}, min_pts={min_pts})"
        raise ValueError(msg)
    if len(cloud) == 0:
        return ClusterSet(())
    labels = DBSCAN(eps=eps, min_samples=min_pts).fit(cloud.xyz).labels_
    clusters, noise = [], list(np.flatnonzero(labels == -1))
    for label in range(labels.max() + 1):
        members = np.flatnonzero(labels == label)
        # a border point claimed by an earlier cluster can leave a later one short
        if members.size >= min_pts:
            clusters.append(tuple(int(i) for i in members))
        else:
            noise.extend(members)
    return ClusterSet(tuple(clusters), tuple(sorted(int(i) for i in noise)))


def _footprint(points: FloatArray, plane: Plane3D) -> float:
    if points.shape[0] < 2:  # noqa: PLR2004
        return 0.0
    n = np.asarray(plane.normal)
    flat = points - np.outer(plane.signed_distance(points), n)
    return float(pdist(flat).max())


def filter_cone_clusters(
    clusters: ClusterSet,
    cloud: PointCloud,
    plane: Plane3D,
    *,
    h_min: Meters = 0.15,
    h_max: Meters = 0.60,
    max_footprint: Meters = 0.5,
) -> ClusterSet:
    """Keep clusters whose top lies `h_min`..`h_max` above the plane with a small footprint; the rest become noise."""
    kept, dropped = [], list(clusters.noise)
    for members in clusters.clusters:
        pts = cloud.xyz[list(members)]
        top = float(plane.signed_distance(pts).max())
        if h_min <= top <= h_max and _footprint(pts, plane) <= max_footprint:
            kept.append(members)
        else:
            dropped.extend(members)
    return ClusterSet(tuple(kept), tuple(sorted(dropped)))


def _axis_depths(
    cam: FloatArray, heights: FloatArray, box: DetectedBox, k: CameraIntrinsics
) -> FloatArray:
    """Move surface returns onto the cone axis along the box-centre line of sight (camera-frame z)."""
    geom = cone_geometry(box.cls)
    radius = geom.radius_at(np.clip(heights / geom.height, 0.0, 1.0))
    xn = k.normalize([box.u, box.v])[0, 0]
    scale = math.sqrt(1.0 + xn * xn)
    lateral = (cam[:, 0] - xn * cam[:, 2]) / scale
    along = np.sqrt(np.maximum(radius * radius - lateral * lateral, 0.0))
    return cam[:, 2] + along / scale


def fuse_lidar_camera(
    cone_clusters: ClusterSet,
    cloud: PointCloud,
    boxes: list[DetectedBox] | tuple[DetectedBox, ...],
    extrinsic: RigidTransform3D,
    k: CameraIntrinsics,
    camera_to_vehicle: RigidTransform3D,
    *,
    plane: Plane3D | None = None,
    statistic: DepthStatistic = "mean",
) -> tuple[list[ConeObservation], list[int]]:
    """Depth per box from the cone-cluster points that project inside it.

    `extrinsic` maps LiDAR points into the camera. The depth is the mean (or median)
    camera-frame z of every cluster point inside the box. With a ground `plane` only the
    cluster with the most points inside is used, and for upright cones each return is
    first moved from the cone surface onto the cone axis. Returns observations and the
    indices of boxes with no points (handed on to the camera tiers).
    """
    observations: list[ConeObservation] = []
    unmatched: list[int] = []
    if not cone_clusters.clusters or not boxes:
        return observations, list(range(len(boxes)))

    idx = np.array([i for c in cone_clusters.clusters for i in c])
    owner = np.concatenate([np.full(len(c), j) for j, c in enumerate(cone_clusters.clusters)])
    cam = extrinsic.apply(cloud.xyz[idx])
    uv, front = project_points(cam, k)
    heights = plane.signed_distance(cloud.xyz[idx]) if plane is not None else None

    for b, box in enumerate(boxes):
        inside = front & box.contains(np.nan_to_num(uv, nan=-1.0))
        if not inside.any():
            unmatched.append(b)
            continue
        if heights is None:
            z = cam[inside, 2]
        else:
            sel = inside & (owner == np.bincount(owner[inside]).argmax())
            upright = box.quality is not ConeQuality.FALLEN
            z = _axis_depths(cam[sel], heights[sel], box, k) if upright else cam[sel, 2]
        depth = float(np.median(z) if statistic == "median" else np.mean(z))
        observations.append(observation_from_box(box, depth, k, camera_to_vehicle, SourceTier.LIDAR_FUSION))
    log.debug("lidar fusion: %d observations, %d boxes unmatched", len(observations), len(unmatched))
    return observations, unmatched

"""Simulated sensors: odometry, a 16-ring spinning LiDAR and the stereo cone detector."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Final

import numpy as np
from scipy.spatial.transform import Rotation

from geometry import (
    N_RINGS,
    CameraIntrinsics,
    ConeGeometry,
    PointCloud,
    RigidTransform3D,
    cone_geometry,
    project_points,
)
from utils.types import ConeClass, ConeQuality

if TYPE_CHECKING:
    from numpy.typing import NDArray

    from geometry import FloatArray
    from track import TrackCone, TrackDefinition
    from utils.types import Meters, Prob, Seconds
    from vehicle import VehicleState


_FLIP: Final = {
    ConeClass.BLUE: ConeClass.YELLOW,
    ConeClass.YELLOW: ConeClass.BLUE,
    ConeClass.ORANGE_SMALL: ConeClass.ORANGE_BIG,
    ConeClass.ORANGE_BIG: ConeClass.ORANGE_SMALL,
}


# ----------------------------------------------------------------------------------------------------------------------
# Noise & mounts


@dataclass(frozen=True, slots=True)
class OdomNoise:
    sigma_v: float = 0.05
    sigma_w: float = 0.01
    bias_v: float = 0.0
    bias_w: float = 0.0

    @classmethod
    def off(cls) -> OdomNoise:
        return cls(0.0, 0.0)


@dataclass(frozen=True, slots=True)
class LidarNoise:
    range_sigma: Meters = 0.02

    @classmethod
    def off(cls) -> LidarNoise:
        return cls(0.0)


@dataclass(frozen=True, slots=True)
class DetectorNoise:
    box_sigma: float = 0.5
    keypoint_sigma: float = 0.5
    class_flip: Prob = 0.02
    miss_slope: float = 0.02  # per metre beyond miss_start
    miss_start: Meters = 15.0
    miss_cap: Prob = 0.9
    occlusion_threshold: Prob = 0.5

    @classmethod
    def off(cls) -> DetectorNoise:
        return cls(0.0, 0.0, 0.0, 0.0)

    def miss_probability(self, distance: Meters) -> Prob:
        return min(max(self.miss_slope * (distance - self.miss_start), 0.0), self.miss_cap)


@dataclass(frozen=True, slots=True)
class LidarParams:
    mount: tuple[Meters, Meters, Meters] = (1.0, 0.0, 0.35)
    elevation_min_deg: float = -15.0
    elevation_step_deg: float = 2.0
    azimuth_step_deg: float = 0.4
    max_range: Meters = 30.0

    @property
    def elevations(self) -> FloatArray:
        return np.deg2rad(self.elevation_min_deg + self.elevation_step_deg * np.arange(N_RINGS))

    @property
    def azimuths(self) -> FloatArray:
        n = round(360.0 / self.azimuth_step_deg)
        return np.deg2rad(-180.0 + self.azimuth_step_deg * np.arange(n))

    def to_vehicle(self) -> RigidTransform3D:
        """LiDAR -> vehicle (the LiDAR frame is level, axes parallel to the vehicle's)."""
        return RigidTransform3D(np.eye(3), np.asarray(self.mount))


@dataclass(frozen=True, slots=True)
class CameraRig:
    """Stereo pair: the left camera is the reference, the right one sits `baseline` along its +x."""

    intrinsics: CameraIntrinsics = field(
        default_factory=lambda: CameraIntrinsics(550.0, 550.0, 640.0, 360.0, 1280, 720)
    )
    mount: tuple[Meters, Meters, Meters] = (0.5, 0.06, 1.0)
    yaw: float = 0.0
    pitch: float = 0.0
    baseline: Meters = 0.12
    max_range: Meters = 35.0

    def __post_init__(self) -> None:
        if self.baseline <= 0:
            msg = f"stereo baseline must be positive, got {self.baseline}"
            raise ValueError(msg)

    def camera_to_vehicle(self) -> RigidTransform3D:
        return RigidTransform3D.from_mount(self.mount, self.yaw, self.pitch)

    def vehicle_to_camera(self) -> RigidTransform3D:
        return self.camera_to_vehicle().inverse()

    def left_to_right(self) -> RigidTransform3D:
        return RigidTransform3D(np.eye(3), np.array([-self.baseline, 0.0, 0.0]))

    def lidar_to_camera(self, lidar: LidarParams) -> RigidTransform3D:
        return self.vehicle_to_camera().compose(lidar.to_vehicle())


# ----------------------------------------------------------------------------------------------------------------------
# Odometry


@dataclass(frozen=True, slots=True)
class OdometrySample:
    timestamp: Seconds
    speed: float
    yaw_rate: float
    noisy: bool


def simulate_odometry(
    vehicle: VehicleState, noise: OdomNoise, t: Seconds, rng: np.random.Generator | None = None
) -> OdometrySample:
    dv = dw = 0.0
    if rng is not None:
        dv = rng.normal(0.0, noise.sigma_v) if noise.sigma_v > 0 else 0.0
        dw = rng.normal(0.0, noise.sigma_w) if noise.sigma_w > 0 else 0.0
    noisy = rng is not None and (noise.sigma_v > 0 or noise.sigma_w > 0)
    return OdometrySample(t, vehicle.speed + noise.bias_v + dv, vehicle.yaw_rate + noise.bias_w + dw, noisy)


# ----------------------------------------------------------------------------------------------------------------------
# LiDAR


def _frustum_pose(
    cone: TrackCone, cx: float, cy: float, h_mount: float, view: tuple[float, float]
) -> tuple[FloatArray, FloatArray, float, float, float]:
    """Base centre, unit axis (base to tip), length, base radius and tip radius in the sensor frame.

    A fallen cone lies with its base centre `base_radius` above the ground and its axis
    level and square to the line of sight from `view`, tip to the viewer's left.
    """
    geom = cone_geometry(cone.cls)
    rb, rt = geom.base_radius, geom.top_width / 2
    if not cone.fallen:
        return np.array([cx, cy, -h_mount]), np.array([0.0, 0.0, 1.0]), geom.height, rb, rt
    sx, sy = cx - view[0], cy - view[1]
    norm = math.hypot(sx, sy) or 1.0
    axis = np.array([-sy / norm, sx / norm, 0.0])
    return np.array([cx, cy, rb - h_mount]), axis, geom.height, rb, rt


def simulate_lidar(
    world: TrackDefinition,
    vehicle: VehicleState,
    params: LidarParams,
    noise: LidarNoise,
    rng: np.random.Generator | None = None,
    *,
    view_from: tuple[Meters, Meters] | None = None,
) -> PointCloud:
    """One full sweep in the LiDAR frame: first hits on the ground plane and on cone frusta.

    `view_from` is the vehicle-frame point fallen cones turn their side to (the camera
    mount, so both sensors see the same pose); it defaults to the LiDAR itself.
    """
    elev, azim = params.elevations, params.azimuths
    ring = np.repeat(np.arange(N_RINGS), azim.size)
    ce = np.cos(elev)[:, None]
    dirs = np.stack(
        [(ce * np.cos(azim)).ravel(), (ce * np.sin(azim)).ravel(), np.repeat(np.sin(elev), azim.size)], axis=1
    )
    h_mount = params.mount[2]
    vx, vy = view_from or params.mount[:2]
    view = (vx - params.mount[0], vy - params.mount[1])

    t_hit = np.full(dirs.shape[0], np.inf)
    down = dirs[:, 2] < 0
    t_hit[down] = h_mount / -dirs[down, 2]

    # sensor origin in the ground frame; cones into the (level) sensor frame
    ox, oy = vehicle.pose.to_ground(params.mount[0], params.mount[1])
    c, s = math.cos(vehicle.pose.heading), math.sin(vehicle.pose.heading)
    for cone in world.cones:
        dx, dy = cone.x - ox, cone.y - oy
        if math.hypot(dx, dy) > params.max_range + 1.0:
            continue
        cx, cy = c * dx + s * dy, -s * dx + c * dy
        t_cone = _ray_frustum(dirs, *_frustum_pose(cone, cx, cy, h_mount, view), h_mount)
        np.minimum(t_hit, t_cone, out=t_hit)

    hit = t_hit <= params.max_range
    t = t_hit[hit]
    if rng is not None and noise.range_sigma > 0:
        t = t + rng.normal(0.0, noise.range_sigma, size=t.size)
    xyz = dirs[hit] * t[:, None]
    intensity = np.where(xyz[:, 2] > -h_mount + 1e-6, 1.0, 0.2)
    return PointCloud(xyz, ring[hit], intensity)


def _nearer(
    out: FloatArray, root: FloatArray, ok: NDArray[np.bool_], dirs: FloatArray, h_mount: float
) -> FloatArray:
    above = root * dirs[:, 2] + h_mount >= 0
    return np.where(ok & (root > 0) & above & (root < out), root, out)


def _ray_frustum(
    dirs: FloatArray, base: FloatArray, axis: FloatArray, length: float, rb: float, rt: float, h_mount: float
) -> FloatArray:
    """Range along each unit ray from the origin to a frustum's lateral surface or end discs, above the ground."""
    k = (rt - rb) / length
    w0 = -base  # origin relative to the base centre
    s0, sd, wd = float(w0 @ axis), dirs @ axis, dirs @ w0
    ww = float(w0 @ w0)
    # squared distance from the axis equals the squared radius at s = s0 + t sd, with r = c0 + c1 t
    c0, c1 = rb + k * s0, k * sd
    a = 1.0 - sd * sd - c1 * c1
    b = 2.0 * (wd - s0 * sd - c0 * c1)
    cc = ww - s0 * s0 - c0 * c0
    disc = b * b - 4.0 * a * cc
    out = np.full(dirs.shape[0], np.inf)

    ok = (disc >= 0) & (np.abs(a) > 1e-12)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    denom = np.where(ok, 2.0 * a, 1.0)
    for root in ((-b - sq) / denom, (-b + sq) / denom):
        along = s0 + root * sd
        out = _nearer(out, root, ok & (along >= 0) & (along <= length), dirs, h_mount)

    facing = np.abs(sd) > 1e-12
    safe_sd = np.where(facing, sd, 1.0)
    for s_cap, r_cap in ((0.0, rb), (length, rt)):
        root = (s_cap - s0) / safe_sd
        radial2 = ww + 2.0 * root * wd + root * root - s_cap * s_cap
        out = _nearer(out, root, facing & (radial2 <= r_cap * r_cap), dirs, h_mount)
    return out


def lidar_to_ground_frame(cloud: PointCloud, vehicle: VehicleState, params: LidarParams) -> FloatArray:
    """Sweep points into the ground frame (z up from the ground plane)."""
    rot = Rotation.from_euler("z", vehicle.pose.heading).as_matrix()
    veh = params.to_vehicle().apply(cloud.xyz)
    return veh @ rot.T + np.array([vehicle.pose.x, vehicle.pose.y, 0.0])


# ----------------------------------------------------------------------------------------------------------------------
# Stereo detector


@dataclass(frozen=True, slots=True, eq=False)
class DetectedBox:
    u: float
    v: float
    w: float
    h: float
    cls: ConeClass
    confidence: Prob
    keypoints: FloatArray | None
    quality: ConeQuality
    cone_id: int = -1  # index of the generating track cone (simulation truth, never used by estimators)

    @property
    def left(self) -> float:
        return self.u - self.w / 2

    @property
    def right(self) -> float:
        return self.u + self.w / 2

    @property
    def top(self) -> float:
        return self.v - self.h / 2

    @property
    def bottom(self) -> float:
        return self.v + self.h / 2

    def contains(self, uv: FloatArray) -> NDArray[np.bool_]:
        inside_u = (uv[:, 0] >= self.left) & (uv[:, 0] <= self.right)
        return inside_u & (uv[:, 1] >= self.top) & (uv[:, 1] <= self.bottom)

    def bounds(self) -> tuple[float, float, float, float]:
        return self.left, self.top, self.right, self.bottom


type Bounds = tuple[float, float, float, float]


def box_from_bounds(
    bounds: Bounds,
    cls: ConeClass,
    quality: ConeQuality = ConeQuality.GOOD,
    *,
    confidence: Prob = 1.0,
    keypoints: FloatArray | None = None,
    cone_id: int = -1,
) -> DetectedBox:
    left, top, right, bottom = bounds
    return DetectedBox(
        (left + right) / 2, (top + bottom) / 2, right - left, bottom - top, cls, confidence, keypoints, quality, cone_id
    )


@dataclass(frozen=True, slots=True, eq=False)
class StereoTruth:
    """What a feature matcher would find in the right image: the true cone pose in the left camera."""

    pose: RigidTransform3D
    geometry: ConeGeometry


@dataclass(frozen=True, slots=True)
class DetectorOutput:
    boxes: tuple[DetectedBox, ...]
    truth: tuple[StereoTruth, ...]  # aligned with `boxes`
    depths: tuple[Meters, ...]  # camera-frame z of each cone's base centre


def cone_pose_in_camera(cone: TrackCone, vehicle: VehicleState, rig: CameraRig) -> RigidTransform3D:
    """Cone-local -> left-camera transform with the keypoint face turned towards the camera."""
    lx, ly = vehicle.pose.to_local(cone.x, cone.y)
    geom = cone_geometry(cone.cls)
    v2c = rig.vehicle_to_camera()
    base = np.array([lx, ly, geom.base_radius if cone.fallen else 0.0])
    pos = v2c.apply(base)
    up = v2c.rotation @ np.array([0.0, 0.0, 1.0])
    y_axis = -up
    view = pos - (pos @ up) * up
    z_axis = view / np.linalg.norm(view)
    x_axis = np.cross(y_axis, z_axis)
    rot = np.column_stack([x_axis, y_axis, z_axis])
    if cone.fallen:
        # lying across the line of sight, tip towards image left
        rot = rot @ Rotation.from_euler("z", -math.pi / 2).as_matrix()
    return RigidTransform3D(rot, pos)


def _silhouette_box(pose: RigidTransform3D, geom: ConeGeometry, k: CameraIntrinsics) -> tuple[Bounds, bool] | None:
    """Pixel-truncated bounds of the projected cone, clamped to the image, plus whether clamping cut it."""
    uv, front = project_points(pose.apply(geom.surface_samples()), k)
    if not front.all():
        return None
    raw = (
        math.floor(uv[:, 0].min()),
        math.floor(uv[:, 1].min()),
        math.ceil(uv[:, 0].max()),
        math.ceil(uv[:, 1].max()),
    )
    left, top = max(raw[0], 0), max(raw[1], 0)
    right, bottom = min(raw[2], k.image_width), min(raw[3], k.image_height)
    if right - left < 1 or bottom - top < 1:
        return None
    return (float(left), float(top), float(right), float(bottom)), (left, top, right, bottom) != raw


def _jitter_bounds(bounds: Bounds, sigma: float, k: CameraIntrinsics, rng: np.random.Generator) -> Bounds:
    left, top, right, bottom = (b + rng.normal(0.0, sigma) for b in bounds)
    left = min(max(left, 0.0), k.image_width - 1.0)
    top = min(max(top, 0.0), k.image_height - 1.0)
    right = min(max(right, left + 1.0), float(k.image_width))
    bottom = min(max(bottom, top + 1.0), float(k.image_height))
    return left, top, right, bottom


def overlap_fraction(a: DetectedBox, b: DetectedBox) -> float:
    """Fraction of `a`'s area covered by `b`."""
    iw = min(a.right, b.right) - max(a.left, b.left)
    ih = min(a.bottom, b.bottom) - max(a.top, b.top)
    if iw <= 0 or ih <= 0:
        return 0.0
    return iw * ih / (a.w * a.h)


def mark_occlusions(boxes: list[DetectedBox], depths: list[float], threshold: Prob) -> list[DetectedBox]:
    """Good boxes covered >= `threshold` by a nearer box become PartiallyVisible."""
    out = []
    for i, box in enumerate(boxes):
        hidden = box.quality is ConeQuality.GOOD and any(
            depths[j] < depths[i] and overlap_fraction(box, other) >= threshold
            for j, other in enumerate(boxes)
            if j != i
        )
        out.append(replace(box, quality=ConeQuality.PARTIALLY_VISIBLE) if hidden else box)
    return out


def simulate_stereo_detector(
    world: TrackDefinition,
    vehicle: VehicleState,
    rig: CameraRig,
    noise: DetectorNoise,
    rng: np.random.Generator | None = None,
) -> DetectorOutput:
    """Boxes and keypoints in the left image plus the right-image truth the stereo matcher draws on.

    Output order is canonical: by left box edge, then cone index.
    """
    k = rig.intrinsics
    cam_x, cam_y = vehicle.pose.to_ground(rig.mount[0], rig.mount[1])
    found: list[tuple[DetectedBox, StereoTruth, float]] = []
    for idx, cone in enumerate(world.cones):
        dist = math.hypot(cone.x - cam_x, cone.y - cam_y)
        if dist > rig.max_range:
            continue
        pose = cone_pose_in_camera(cone, vehicle, rig)
        if pose.translation[2] < 0.5:  # noqa: PLR2004
            continue
        geom = cone_geometry(cone.cls)
        sil = _silhouette_box(pose, geom, k)
        if sil is None:
            continue
        bounds, clipped = sil
        if rng is not None and rng.random() < noise.miss_probability(dist):
            continue

        cls = cone.cls
        kp, _ = project_points(pose.apply(geom.canonical_keypoints), k)
        if rng is not None:
            if noise.box_sigma > 0:
                bounds = _jitter_bounds(bounds, noise.box_sigma, k, rng)
            if noise.keypoint_sigma > 0:
                kp = kp + rng.normal(0.0, noise.keypoint_sigma, size=kp.shape)
            if rng.random() < noise.class_flip:
                cls = _FLIP[cls]

        if cone.fallen:
            quality = ConeQuality.FALLEN
        elif clipped:
            quality = ConeQuality.PARTIALLY_VISIBLE
        else:
            quality = ConeQuality.GOOD
        confidence = min(max(1.0 - dist / (2 * rig.max_range), 0.05), 1.0)
        box = box_from_bounds(bounds, cls, quality, confidence=confidence, keypoints=kp, cone_id=idx)
        found.append((box, StereoTruth(pose, geom), float(pose.translation[2])))

    found.sort(key=lambda f: (f[0].left, f[0].cone_id))
    boxes = mark_occlusions([f[0] for f in found], [f[2] for f in found], noise.occlusion_threshold)
    return DetectorOutput(tuple(boxes), tuple(f[1] for f in found), tuple(f[2] for f in found))

"""Shared geometry: poses, rigid transforms, pinhole camera, cone models and PnP."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cache
from typing import TYPE_CHECKING, Final

import numpy as np
from scipy.spatial.transform import Rotation

from utils.types import ConeClass

if TYPE_CHECKING:
    from numpy.typing import ArrayLike, NDArray

    from utils.types import Meters, Pixels, Radians

    type FloatArray = NDArray[np.float64]


EPS_Z: Final = 1e-6
ORTHO_TOL: Final = 1e-9
PNP_MAX_ITERS: Final = 50
UNDISTORT_ITERS: Final = 10

# vehicle (x fwd, y left, z up) -> camera (x right, y down, z fwd)
VEHICLE_TO_CAMERA: Final = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])


class GeometryError(ValueError):
    pass


class DegenerateConfiguration(GeometryError):
    pass


class NoConvergence(GeometryError):
    pass


def normalize_angle(a: float, /) -> Radians:
    """Wrap into (-pi, pi]; -pi maps to pi."""
    r = math.fmod(a + math.pi, 2 * math.pi)
    if r <= 0.0:
        r += 2 * math.pi
    return r - math.pi


def normalize_angles(a: ArrayLike, /) -> FloatArray:
    r = np.mod(np.asarray(a, dtype=float) + np.pi, 2 * np.pi)
    r = np.where(r <= 0.0, r + 2 * np.pi, r)
    return r - np.pi


@dataclass(frozen=True, slots=True)
class Pose2D:
    x: Meters = 0.0
    y: Meters = 0.0
    heading: Radians = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "heading", normalize_angle(self.heading))

    def compose(self, other: Pose2D, /) -> Pose2D:
        """`self ⊕ other`: apply `other` expressed in this pose's frame."""
        c, s = math.cos(self.heading), math.sin(self.heading)
        return Pose2D(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.heading + other.heading,
        )

    def inverse(self) -> Pose2D:
        c, s = math.cos(self.heading), math.sin(self.heading)
        return Pose2D(-c * self.x - s * self.y, s * self.x - c * self.y, -self.heading)

    def to_local(self, px: float, py: float) -> tuple[Meters, Meters]:
        """Ground-frame point into this pose's body frame."""
        dx, dy = px - self.x, py - self.y
        c, s = math.cos(self.heading), math.sin(self.heading)
        return c * dx + s * dy, -s * dx + c * dy

    def to_ground(self, lx: float, ly: float) -> tuple[Meters, Meters]:
        c, s = math.cos(self.heading), math.sin(self.heading)
        return self.x + c * lx - s * ly, self.y + s * lx + c * ly

    def distance_to(self, other: Pose2D, /) -> Meters:
        return math.hypot(self.x - other.x, self.y - other.y)

    def as_array(self) -> FloatArray:
        return np.array([self.x, self.y, self.heading])


@dataclass(frozen=True, slots=True, eq=False)
class RigidTransform3D:
    """Maps points `p` to `R @ p + t`."""

    rotation: FloatArray = field(default_factory=lambda: np.eye(3))
    translation: FloatArray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.allclose(r @ r.T, np.eye(3), rtol=0.0, atol=ORTHO_TOL) or abs(np.linalg.det(r) - 1.0) > ORTHO_TOL:
            msg = "rotation must be orthonormal with det +1"
            raise GeometryError(msg)
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> RigidTransform3D:
        return cls()

    @classmethod
    def from_rotvec(cls, rotvec: ArrayLike, translation: ArrayLike) -> RigidTransform3D:
        return cls(Rotation.from_rotvec(np.asarray(rotvec, dtype=float)).as_matrix(), np.asarray(translation))

    @classmethod
    def from_mount(cls, position: ArrayLike, yaw: Radians = 0.0, pitch: Radians = 0.0) -> RigidTransform3D:
        """Camera -> vehicle transform of a camera at `position` (vehicle frame) looking along yaw/pitch."""
        body = Rotation.from_euler("zy", [yaw, pitch]).as_matrix()
        return cls(body @ VEHICLE_TO_CAMERA.T, np.asarray(position, dtype=float))

    def compose(self, other: RigidTransform3D, /) -> RigidTransform3D:
        """`self ∘ other` (apply `other` first)."""
        return RigidTransform3D(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def inverse(self) -> RigidTransform3D:
        rt = self.rotation.T
        return RigidTransform3D(rt, -rt @ self.translation)

    def apply(self, points: ArrayLike) -> FloatArray:
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def rotvec(self) -> FloatArray:
        return Rotation.from_matrix(self.rotation).as_rotvec()


@dataclass(frozen=True, slots=True)
class CameraIntrinsics:
    """Pinhole intrinsics; `distortion` is (k1, k2, p1, p2, k3)."""

    fx: Pixels
    fy: Pixels
    cx: Pixels
    cy: Pixels
    image_width: int
    image_height: int
    distortion: tuple[float, float, float, float, float] = (0.0, 0.0, 0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            msg = f"focal lengths must be positive (fx={self.fx}, fy={self.fy})"
            raise GeometryError(msg)
        if not (0 < self.cx < self.image_width and 0 < self.cy < self.image_height):
            msg = f"principal point ({self.cx}, {self.cy}) outside {self.image_width}x{self.image_height} image"
            raise GeometryError(msg)
        if len(self.distortion) != 5:  # noqa: PLR2004
            msg = "distortion needs 5 coefficients (k1, k2, p1, p2, k3)"
            raise GeometryError(msg)

    @property
    def matrix(self) -> FloatArray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def distorted(self) -> bool:
        return any(self.distortion)

    def distort(self, xn: FloatArray, yn: FloatArray) -> tuple[FloatArray, FloatArray]:
        """Radial-tangential model on normalized coordinates."""
        if not self.distorted:
            return xn, yn
        k1, k2, p1, p2, k3 = self.distortion
        r2 = xn * xn + yn * yn
        radial = 1.0 + k1 * r2 + k2 * r2 * r2 + k3 * r2 * r2 * r2
        xd = xn * radial + 2 * p1 * xn * yn + p2 * (r2 + 2 * xn * xn)
        yd = yn * radial + p1 * (r2 + 2 * yn * yn) + 2 * p2 * xn * yn
        return xd, yd

    def undistort(self, xd: FloatArray, yd: FloatArray) -> tuple[FloatArray, FloatArray]:
        """Invert `distort` by fixed-point iteration."""
        if not self.distorted:
            return xd, yd
        xn, yn = np.array(xd, dtype=float), np.array(yd, dtype=float)
        for _ in range(UNDISTORT_ITERS):
            ex, ey = self.distort(xn, yn)
            xn, yn = xn - (ex - xd), yn - (ey - yd)
        return xn, yn

    def normalize(self, uv: ArrayLike) -> FloatArray:
        """Pixels -> undistorted normalized image coordinates (N, 2)."""
        p = np.atleast_2d(np.asarray(uv, dtype=float))
        xn, yn = self.undistort((p[:, 0] - self.cx) / self.fx, (p[:, 1] - self.cy) / self.fy)
        return np.column_stack([xn, yn])

    def back_project(self, u: Pixels, v: Pixels, depth: Meters) -> FloatArray:
        """Camera-frame point at `depth` along the ray through (u, v)."""
        xn, yn = self.normalize([u, v])[0]
        return np.array([xn * depth, yn * depth, depth])


type Pixel = tuple[Pixels, Pixels]


def project_point(p_cam: ArrayLike, k: CameraIntrinsics, *, eps_z: float = EPS_Z) -> Pixel | None:
    """Pinhole projection with distortion; `None` means the point is behind the image plane."""
    x, y, z = np.asarray(p_cam, dtype=float)
    if z <= eps_z:
        return None
    xd, yd = k.distort(np.array(x / z), np.array(y / z))
    return float(k.fx * xd + k.cx), float(k.fy * yd + k.cy)


def project_points(p_cam: ArrayLike, k: CameraIntrinsics, *, eps_z: float = EPS_Z) -> tuple[FloatArray, NDArray]:
    """Vectorized `project_point`: returns (uv (N, 2), in-front mask (N,)); rows behind are NaN."""
    p = np.atleast_2d(np.asarray(p_cam, dtype=float))
    front = p[:, 2] > eps_z
    z = np.where(front, p[:, 2], np.nan)
    xd, yd = k.distort(p[:, 0] / z, p[:, 1] / z)
    return np.column_stack([k.fx * xd + k.cx, k.fy * yd + k.cy]), front


# ----------------------------------------------------------------------------------------------------------------------
# Cones


@dataclass(frozen=True, slots=True, eq=False)
class ConeGeometry:
    """Frustum model; local frame has origin at base centre, x right, y down (up is -y), z away from viewer."""

    cls: ConeClass
    height: Meters
    base_width: Meters
    top_width: Meters
    canonical_keypoints: FloatArray

    def __post_init__(self) -> None:
        kp = np.asarray(self.canonical_keypoints, dtype=float)
        if kp.shape != (7, 3):
            msg = f"expected 7 canonical keypoints, got {kp.shape}"
            raise GeometryError(msg)
        radial = np.hypot(kp[:, 0], kp[:, 2])
        if np.any(radial > self.base_radius + 1e-12) or np.any(kp[:, 1] > 1e-12) or np.any(kp[:, 1] < -self.height):
            msg = "keypoints must lie within the cone bounding cylinder"
            raise GeometryError(msg)
        kp.flags.writeable = False
        object.__setattr__(self, "canonical_keypoints", kp)

    @property
    def base_radius(self) -> Meters:
        return self.base_width / 2

    def radius_at(self, frac: float) -> Meters:
        """Frustum radius at `frac` of the height (0 = base)."""
        return self.base_radius + (self.top_width / 2 - self.base_radius) * frac

    def face_points(self, heights: tuple[float, ...], laterals: tuple[float, ...]) -> FloatArray:
        """Points on the viewer-facing silhouette plane (z = 0) at height / radius fractions."""
        return np.array([[lat * self.radius_at(h), -h * self.height, 0.0] for h in heights for lat in laterals])

    def surface_samples(self, n: int = 16) -> FloatArray:
        """Rim points of the base and top circles, used for silhouette boxes."""
        a = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
        base = np.column_stack([self.base_radius * np.cos(a), np.zeros(n), self.base_radius * np.sin(a)])
        r_top = self.top_width / 2
        top = np.column_stack([r_top * np.cos(a), np.full(n, -self.height), r_top * np.sin(a)])
        return np.vstack([base, top])


_CONE_DIMS: Final = {
    # height, base width, top width
    "small": (0.325, 0.200, 0.050),
    "big": (0.505, 0.260, 0.060),
}


@cache
def cone_geometry(cls: ConeClass) -> ConeGeometry:
    height, base_w, top_w = _CONE_DIMS["big" if cls is ConeClass.ORANGE_BIG else "small"]
    rb, rt = base_w / 2, top_w / 2
    r = lambda f: rb + (rt - rb) * f  # noqa: E731
    keypoints = np.array(
        [
            [0.0, -height, 0.0],
            [-r(2 / 3), -2 * height / 3, 0.0],
            [r(2 / 3), -2 * height / 3, 0.0],
            [-r(1 / 3), -height / 3, 0.0],
            [r(1 / 3), -height / 3, 0.0],
            [-rb, 0.0, 0.0],
            [rb, 0.0, 0.0],
        ]
    )
    return ConeGeometry(cls, height, base_w, top_w, keypoints)


def facing_pose(position_cam: ArrayLike, *, roll: Radians = 0.0) -> RigidTransform3D:
    """Cone-local -> camera transform for a cone whose keypoint plane faces the camera.

    `roll` rotates the cone about the viewing axis (a fallen cone lies at +-pi/2).
    """
    t = np.asarray(position_cam, dtype=float)
    yaw = math.atan2(t[0], t[2])
    rot = Rotation.from_euler("y", yaw).as_matrix() @ Rotation.from_euler("z", roll).as_matrix()
    return RigidTransform3D(rot, t)


# ----------------------------------------------------------------------------------------------------------------------
# Perspective-n-Point


@dataclass(frozen=True, slots=True)
class PnPResult:
    transform: RigidTransform3D
    rms: Pixels
    iterations: int
    rms_history: tuple[float, ...]


def _reprojection_residuals(params: FloatArray, obj: FloatArray, img: FloatArray, k: CameraIntrinsics) -> FloatArray:
    rot = Rotation.from_rotvec(params[:3]).as_matrix()
    cam = obj @ rot.T + params[3:]
    z = np.where(np.abs(cam[:, 2]) < EPS_Z, EPS_Z, cam[:, 2])
    xd, yd = k.distort(cam[:, 0] / z, cam[:, 1] / z)
    return np.concatenate([k.fx * xd + k.cx - img[:, 0], k.fy * yd + k.cy - img[:, 1]])


def _numeric_jacobian(params: FloatArray, obj: FloatArray, img: FloatArray, k: CameraIntrinsics) -> FloatArray:
    h = 1e-7
    cols = []
    for i in range(params.size):
        step = np.zeros_like(params)
        step[i] = h
        fwd = _reprojection_residuals(params + step, obj, img, k)
        bwd = _reprojection_residuals(params - step, obj, img, k)
        cols.append((fwd - bwd) / (2 * h))
    return np.column_stack(cols)


def _hartley(points: FloatArray) -> tuple[FloatArray, FloatArray]:
    """Similarity normalizing 2-D points to zero mean and mean distance sqrt(2)."""
    mean = points.mean(axis=0)
    spread = np.mean(np.linalg.norm(points - mean, axis=1))
    s = math.sqrt(2) / spread
    t = np.array([[s, 0.0, -s * mean[0]], [0.0, s, -s * mean[1]], [0.0, 0.0, 1.0]])
    return (points - mean) * s, t


def _homography_pose(obj: FloatArray, img_n: FloatArray) -> RigidTransform3D:
    """Initial pose from the homography between the best-fit object plane and normalized image points."""
    centroid = obj.mean(axis=0)
    _, sv, vt = np.linalg.svd(obj - centroid)
    if sv[1] <= 1e-9 * max(sv[0], 1e-12):
        msg = "object points are collinear"
        raise DegenerateConfiguration(msg)
    basis = vt.T
    if np.linalg.det(basis) < 0:
        basis[:, 2] *= -1
    plane = (obj - centroid) @ basis[:, :2]

    src, t_src = _hartley(plane)
    dst, t_dst = _hartley(img_n)
    rows = []
    for (x, y), (u, v) in zip(src, dst, strict=True):
        rows.append([-x, -y, -1, 0, 0, 0, u * x, u * y, u])
        rows.append([0, 0, 0, -x, -y, -1, v * x, v * y, v])
    _, _, vh = np.linalg.svd(np.asarray(rows))
    hom = np.linalg.inv(t_dst) @ vh[-1].reshape(3, 3) @ t_src

    scale = 2.0 / (np.linalg.norm(hom[:, 0]) + np.linalg.norm(hom[:, 1]))
    if hom[2, 2] * scale < 0:
        scale = -scale
    r1, r2, t_plane = hom[:, 0] * scale, hom[:, 1] * scale, hom[:, 2] * scale
    u, _, wt = np.linalg.svd(np.column_stack([r1, r2, np.cross(r1, r2)]))
    rot_plane = u @ np.diag([1.0, 1.0, np.linalg.det(u @ wt)]) @ wt

    rot = rot_plane @ basis.T
    return RigidTransform3D(rot, t_plane - rot @ centroid)


def solve_pnp(
    object_points: ArrayLike,
    image_points: ArrayLike,
    k: CameraIntrinsics,
    *,
    max_rms: Pixels = 5.0,
    max_iters: int = PNP_MAX_ITERS,
) -> PnPResult:
    """Camera-frame pose of the object from >= 4 correspondences.

    Homography (DLT) initialisation on the object's best-fit plane, then damped
    Gauss-Newton on pixel reprojection error; a step is only accepted when it
    lowers the error, so `rms_history` is non-increasing.
    """
    obj = np.atleast_2d(np.asarray(object_points, dtype=float))
    img = np.atleast_2d(np.asarray(image_points, dtype=float))
    if obj.shape[0] < 4 or obj.shape[0] != img.shape[0]:  # noqa: PLR2004
        msg = f"need >= 4 matching correspondences, got {obj.shape[0]} object / {img.shape[0]} image"
        raise DegenerateConfiguration(msg)

    init = _homography_pose(obj, k.normalize(img))
    params = np.concatenate([init.rotvec(), init.translation])
    res = _reprojection_residuals(params, obj, img, k)
    cost = float(res @ res)
    history = [math.sqrt(cost / obj.shape[0])]

    damping, converged, small, it = 1e-3, False, False, 0
    for it in range(1, max_iters + 1):  # noqa: B007
        jac = _numeric_jacobian(params, obj, img, k)
        normal = jac.T @ jac
        grad = jac.T @ res
        if cost < 1e-26 or np.max(np.abs(grad)) < 1e-18:
            converged = True
            break
        accepted = False
        while damping < 1e12:  # noqa: PLR2004
            try:
                step = np.linalg.solve(normal + damping * np.diag(np.diag(normal) + 1e-12), -grad)
            except np.linalg.LinAlgError as e:
                msg = "singular normal equations"
                raise DegenerateConfiguration(msg) from e
            cand = params + step
            cand_res = _reprojection_residuals(cand, obj, img, k)
            cand_cost = float(cand_res @ cand_res)
            if cand_cost < cost:
                accepted = True
                small = cost - cand_cost <= 1e-14 * cost or np.linalg.norm(step) < 1e-14
                params, res, cost = cand, cand_res, cand_cost
                history.append(math.sqrt(cost / obj.shape[0]))
                damping = max(damping / 10, 1e-12)
                break
            damping *= 10
        if not accepted or small:
            converged = True
            break

    if not np.all(np.isfinite(params)):
        msg = "PnP diverged"
        raise DegenerateConfiguration(msg)

    transform = RigidTransform3D.from_rotvec(params[:3], params[3:])
    rms = history[-1]
    if transform.translation[2] <= 0 or (not converged and rms > max_rms):
        msg = f"PnP did not converge (rms={rms:.3g} px after {it} iterations)"
        raise NoConvergence(msg)
    return PnPResult(transform, rms, it, tuple(history))


def transform_lidar_to_camera(cloud: PointCloud, extrinsic: RigidTransform3D) -> PointCloud:
    """Map every point through `extrinsic`; ring & intensity carried along."""
    return PointCloud(extrinsic.apply(cloud.xyz), cloud.ring, cloud.intensity)


# ----------------------------------------------------------------------------------------------------------------------
# Point clouds


N_RINGS: Final = 16


@dataclass(frozen=True, slots=True, eq=False)
class PointCloud:
    xyz: FloatArray
    ring: NDArray[np.int64]
    intensity: FloatArray

    def __post_init__(self) -> None:
        xyz = np.asarray(self.xyz, dtype=float).reshape(-1, 3)
        ring = np.asarray(self.ring, dtype=np.int64).reshape(-1)
        inten = np.asarray(self.intensity, dtype=float).reshape(-1)
        if not (xyz.shape[0] == ring.size == inten.size):
            msg = "xyz, ring and intensity lengths differ"
            raise GeometryError(msg)
        if ring.size and (ring.min() < 0 or ring.max() >= N_RINGS):
            msg = f"ring index outside [0, {N_RINGS - 1}]"
            raise GeometryError(msg)
        object.__setattr__(self, "xyz", xyz)
        object.__setattr__(self, "ring", ring)
        object.__setattr__(self, "intensity", inten)

    def __len__(self) -> int:
        return self.xyz.shape[0]

    @classmethod
    def empty(cls) -> PointCloud:
        return cls(np.zeros((0, 3)), np.zeros(0, dtype=np.int64), np.zeros(0))

    @classmethod
    def from_xyz(cls, xyz: ArrayLike) -> PointCloud:
        p = np.asarray(xyz, dtype=float).reshape(-1, 3)
        return cls(p, np.zeros(p.shape[0], dtype=np.int64), np.zeros(p.shape[0]))

    def subset(self, idx: ArrayLike) -> PointCloud:
        i = np.asarray(idx)
        return PointCloud(self.xyz[i], self.ring[i], self.intensity[i])

"""Camera tiers: monocular box-height power law (plus its PnP variant) and the stereo keypoint pipeline.

The stereo matcher has no images to work on; its "features" are points on the true cone face
seen by both cameras, perturbed by a matching-noise model in which wider search regions
produce more mismatches.
"""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass
from enum import StrEnum
from typing import TYPE_CHECKING, Final

import numpy as np

from geometry import RigidTransform3D, cone_geometry, project_points, solve_pnp
from observation import BadConeQuality, InsufficientSamples, ZeroDisparity, observation_from_box
from utils.types import ConeClass, ConeQuality, SourceTier

if TYPE_CHECKING:
    from collections.abc import Iterable

    from geometry import CameraIntrinsics, FloatArray
    from observation import ConeObservation
    from sensors import DetectedBox, StereoTruth
    from utils.types import Meters, Pixels


MIN_FIT_SAMPLES: Final = 10
MIN_DISPARITY: Final = 0.1
FEATURE_HEIGHTS: Final = (0.2, 0.4, 0.6, 0.8)
FEATURE_LATERALS: Final = (-0.5, 0.0, 0.5)


# ----------------------------------------------------------------------------------------------------------------------
# Monocular


@dataclass(frozen=True, slots=True)
class MonoCurve:
    """depth = a * h ** b, with h the box height as a fraction of the image height."""

    a: float = 0.498
    b: float = -0.954

    def depth(self, h_frac: float) -> Meters:
        return self.a * h_frac**self.b


type MonoCalibration = MonoCurve | Mapping[ConeClass, MonoCurve]


def _curve_for(calib: MonoCalibration, cls: ConeClass) -> MonoCurve:
    return calib.get(cls, MonoCurve()) if isinstance(calib, Mapping) else calib


def mono_depth_from_box(
    box: DetectedBox,
    k: CameraIntrinsics,
    calib: MonoCalibration,
    camera_to_vehicle: RigidTransform3D,
    *,
    require_good: bool = True,
) -> ConeObservation:
    if require_good and box.quality is not ConeQuality.GOOD:
        msg = f"monocular depth needs a good cone, got {box.quality}"
        raise BadConeQuality(msg)
    depth = _curve_for(calib, box.cls).depth(box.h / k.image_height)
    return observation_from_box(box, depth, k, camera_to_vehicle, SourceTier.MONOCULAR)


def refit_mono_curve(samples: Iterable[tuple[float, Meters]]) -> MonoCurve:
    """Least squares on log(depth) = log(a) + b log(h)."""
    data = np.asarray(list(samples), dtype=float).reshape(-1, 2)
    if data.shape[0] < MIN_FIT_SAMPLES:
        msg = f"need >= {MIN_FIT_SAMPLES} samples, got {data.shape[0]}"
        raise InsufficientSamples(msg)
    if np.any(data <= 0):
        msg = "box heights and depths must be positive"
        raise InsufficientSamples(msg)
    b, log_a = np.polyfit(np.log(data[:, 0]), np.log(data[:, 1]), 1)
    return MonoCurve(float(math.exp(log_a)), float(b))


def mono_depth_pnp(box: DetectedBox, k: CameraIntrinsics, camera_to_vehicle: RigidTransform3D) -> ConeObservation:
    """Depth from the PnP translation of the 7 keypoints (benchmarked only, not routed)."""
    if box.keypoints is None:
        msg = "box has no keypoints"
        raise BadConeQuality(msg)
    pnp = solve_pnp(cone_geometry(box.cls).canonical_keypoints, box.keypoints, k)
    return observation_from_box(box, float(pnp.transform.translation[2]), k, camera_to_vehicle, SourceTier.MONOCULAR)


# ----------------------------------------------------------------------------------------------------------------------
# Stereo


class StereoRegion(StrEnum):
    FULL = "full"
    SLENDER = "slender"


class StereoPick(StrEnum):
    TOP1 = "top1"
    TOP2 = "top2"


@dataclass(frozen=True, slots=True)
class StereoMode:
    region: StereoRegion = StereoRegion.SLENDER
    pick: StereoPick = StereoPick.TOP1

    def __str__(self) -> str:
        return f"{self.region}_{self.pick}"


@dataclass(frozen=True, slots=True)
class StereoNoise:
    match_sigma: Pixels = 0.5
    rank_growth: float = 1.5  # sigma of the k-th best match is match_sigma * (1 + rank_growth * k)
    mismatch_full: float = 0.10
    mismatch_slender: float = 0.02
    mismatch_range: tuple[float, float] = (0.3, 0.6)  # relative disparity error of a mismatch
    slender_fraction: float = 0.4

    @classmethod
    def off(cls) -> StereoNoise:
        return cls(0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True, slots=True, eq=False)
class _Match:
    disparity: Pixels
    offset: Meters  # cone-origin depth minus matched point depth, from the PnP pose


@dataclass(frozen=True, slots=True)
class StereoResult:
    observation: ConeObservation
    disparity: Pixels
    n_candidates: int
    predicted_right: tuple[float, float, float, float]


def _predicted_right_box(
    pose: RigidTransform3D, left_to_right: RigidTransform3D, kp_local: FloatArray, k: CameraIntrinsics
) -> tuple[float, float, float, float]:
    uv, _ = project_points(left_to_right.compose(pose).apply(kp_local), k)
    return float(uv[:, 0].min()), float(uv[:, 1].min()), float(uv[:, 0].max()), float(uv[:, 1].max())


def stereo_depth(
    box: DetectedBox,
    truth: StereoTruth,
    k: CameraIntrinsics,
    baseline: Meters,
    camera_to_vehicle: RigidTransform3D,
    *,
    mode: StereoMode | None = None,
    noise: StereoNoise | None = None,
    rng: np.random.Generator | None = None,
) -> StereoResult:
    """Stereo depth of one box.

    1. PnP on the left keypoints gives the cone pose.
    2. The pose, shifted by the baseline, predicts the cone's box in the right image.
    3. Face features inside the (full or slender) left region are matched into it.
    4. Disparity of the best match (Top1) or the mean of the best two (Top2) gives
       the matched point's depth, moved to the cone origin with the PnP pose.
    """
    mode, noise = mode or StereoMode(), noise or StereoNoise()
    if box.keypoints is None:
        msg = "stereo needs the 7 keypoints"
        raise BadConeQuality(msg)
    if baseline <= 0:
        msg = f"baseline must be positive, got {baseline}"
        raise ValueError(msg)
    left_to_right = RigidTransform3D(np.eye(3), np.array([-baseline, 0.0, 0.0]))
    geom = cone_geometry(box.cls)
    pnp = solve_pnp(geom.canonical_keypoints, box.keypoints, k)
    predicted = _predicted_right_box(pnp.transform, left_to_right, geom.canonical_keypoints, k)

    # features on the true cone face as seen by both cameras
    local = truth.geometry.face_points(FEATURE_HEIGHTS, FEATURE_LATERALS)
    left_pts = truth.pose.apply(local)
    uv_left, _ = project_points(left_pts, k)
    uv_right, _ = project_points(left_to_right.apply(left_pts), k)

    slender = mode.region is StereoRegion.SLENDER
    half_band = (noise.slender_fraction if slender else 1.0) * box.w / 2
    in_region = np.abs(uv_left[:, 0] - box.u) <= half_band + 1e-9
    in_region &= (uv_right[:, 0] >= predicted[0] - box.w) & (uv_right[:, 0] <= predicted[2] + box.w)
    candidates = np.flatnonzero(in_region)
    if candidates.size == 0:
        candidates = np.array([int(np.argmin(np.abs(uv_left[:, 0] - box.u)))])

    pose_est = pnp.transform
    est_depths = pose_est.apply(geom.face_points(FEATURE_HEIGHTS, FEATURE_LATERALS))[:, 2]
    t_z = float(pose_est.translation[2])

    order = rng.permutation(candidates) if rng is not None else candidates
    p_mis = noise.mismatch_slender if slender else noise.mismatch_full
    matches = []
    for rank, c in enumerate(order[:2]):
        d = float(uv_left[c, 0] - uv_right[c, 0])
        if rng is not None:
            if noise.match_sigma > 0:
                d += rng.normal(0.0, noise.match_sigma * (1.0 + noise.rank_growth * rank))
            if p_mis > 0 and rng.random() < p_mis:
                d += (1.0 if rng.random() < 0.5 else -1.0) * rng.uniform(*noise.mismatch_range) * d  # noqa: PLR2004
        matches.append(_Match(d, t_z - float(est_depths[c])))

    used = matches[:1] if mode.pick is StereoPick.TOP1 or len(matches) < 2 else matches[:2]  # noqa: PLR2004
    disparity = float(np.mean([m.disparity for m in used]))
    if disparity <= MIN_DISPARITY:
        msg = f"disparity {disparity:.3f} px <= {MIN_DISPARITY} px"
        raise ZeroDisparity(msg)
    depth = k.fx * baseline / disparity + float(np.mean([m.offset for m in used]))
    obs = observation_from_box(box, depth, k, camera_to_vehicle, SourceTier.STEREO)
    return StereoResult(obs, disparity, int(candidates.size), predicted)


def default_mono_calibration() -> dict[ConeClass, MonoCurve]:
    return dict.fromkeys(ConeClass, MonoCurve())

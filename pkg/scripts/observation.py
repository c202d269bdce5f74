"""Cone observations shared by every depth tier, and the perception errors."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

from utils.types import SourceTier

if TYPE_CHECKING:
    from geometry import CameraIntrinsics, RigidTransform3D
    from sensors import DetectedBox
    from utils.types import ConeClass, Meters, Prob, Radians


class PerceptionError(ValueError):
    pass


class InsufficientPoints(PerceptionError):
    pass


class NoPlaneFound(PerceptionError):
    pass


class BadConeQuality(PerceptionError):
    pass


class InsufficientSamples(PerceptionError):
    pass


class ZeroDisparity(PerceptionError):
    pass


@dataclass(frozen=True, slots=True)
class ConeObservation:
    """A cone in the vehicle frame (range from the rear axle, bearing +left)."""

    range: Meters
    bearing: Radians
    cls: ConeClass
    source_tier: SourceTier
    confidence: Prob
    depth: Meters = math.nan  # camera-frame z the tier estimated
    cone_id: int = -1

    def __post_init__(self) -> None:
        if not self.range > 0:
            msg = f"observation range must be positive, got {self.range}"
            raise PerceptionError(msg)
        if not abs(self.bearing) < math.pi:
            msg = f"observation bearing {self.bearing} outside (-pi, pi)"
            raise PerceptionError(msg)

    @property
    def local_xy(self) -> tuple[Meters, Meters]:
        return self.range * math.cos(self.bearing), self.range * math.sin(self.bearing)


def observation_from_box(
    box: DetectedBox,
    depth: Meters,
    k: CameraIntrinsics,
    camera_to_vehicle: RigidTransform3D,
    tier: SourceTier,
) -> ConeObservation:
    """Back-project the box centre to `depth` and express it as range/bearing from the vehicle origin."""
    x, y, _ = camera_to_vehicle.apply(k.back_project(box.u, box.v, depth))
    return ConeObservation(
        float(math.hypot(x, y)),
        float(math.atan2(y, x)),
        box.cls,
        tier,
        box.confidence,
        float(depth),
        box.cone_id,
    )

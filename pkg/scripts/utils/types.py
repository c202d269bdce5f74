from __future__ import annotations

from enum import StrEnum
from typing import Annotated, TypedDict

from annotated_types import Ge, Gt, Le

Uint = Annotated[int, Ge(0)]
Ufloat = Annotated[float, Ge(0.0)]
Meters = float
Radians = float
Seconds = Annotated[float, Ge(0.0)]
Pixels = float
Prob = Annotated[float, Ge(0.0), Le(1.0)]
Percent = Annotated[float, Ge(0.0), Le(100.0)]
PosFloat = Annotated[float, Gt(0.0)]


class ConeClass(StrEnum):
    BLUE = "blue"
    YELLOW = "yellow"
    ORANGE_SMALL = "orange_small"
    ORANGE_BIG = "orange_big"

    @property
    def index(self) -> int:
        """Histogram bin of this class."""
        return list(ConeClass).index(self)


class Mission(StrEnum):
    AUTOCROSS = "autocross"
    TRACKDRIVE = "trackdrive"
    SKIDPAD = "skidpad"
    ACCELERATION = "acceleration"


class ConeQuality(StrEnum):
    GOOD = "good"
    FALLEN = "fallen"
    PARTIALLY_VISIBLE = "partially_visible"


class SourceTier(StrEnum):
    LIDAR_FUSION = "lidar_fusion"
    MONOCULAR = "monocular"
    STEREO = "stereo"


class MissionStatus(StrEnum):
    STARTING = "starting"
    RACING = "racing"
    FINISHING = "finishing"
    EMERGENCY_STOP = "emergency_stop"


class TickRow(TypedDict):
    """One control tick of a closed-loop run."""

    t: float
    true_x: float
    true_y: float
    true_heading: float
    true_speed: float
    est_x: float
    est_y: float
    est_heading: float
    dr_x: float  # motion-only (dead-reckoning) pose
    dr_y: float
    dr_heading: float
    cov_trace: float
    steering_rad: float
    accel_mps2: float
    cross_track_m: float
    heading_err_rad: float
    status: str
    segment: str
    laps: Uint
    cones_hit: Uint
    n_landmarks: Uint


class ObservationRow(TypedDict):
    """One perception observation joined with its ground-truth cone."""

    t: float
    cone_id: int
    tier: str
    true_depth_m: float
    est_depth_m: float
    rel_err_pct: float


class MapTraceRow(TypedDict):
    t: float
    n_landmarks: Uint
    landmark_mse_m2: float


class DepthRow(TypedDict):
    """Per-cone depth benchmark result for one pipeline variant."""

    cone_id: Uint
    true_depth_m: float
    est_depth_m: float
    tier: str
    variant: str
    rel_err_pct: float


class RunSummary(TypedDict):
    status: str
    sim_time_s: float
    laps: Uint
    lap_times_s: list[float]
    cones_hit: Uint
    mean_abs_cross_track_m: float
    pose_rmse_slam_m: float
    pose_rmse_dead_reckoning_m: float
    landmark_mse_m2: float
    n_landmarks: Uint
    tier_counts: dict[str, int]
    tier_mean_abs_err_pct: dict[str, float]
    segments: list[str]

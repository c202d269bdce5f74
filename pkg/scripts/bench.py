"""Static depth benchmark: one cone per scene, every depth pipeline variant on every cone."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from itertools import repeat
from typing import TYPE_CHECKING, Final

import numpy as np
import pandas as pd

from geometry import GeometryError, Pose2D
from observation import PerceptionError
from perception import PerceptionConfig, PerceptionFrame, calibrate_mono, three_tier_pipeline
from sensors import simulate_lidar, simulate_stereo_detector
from track import TrackCone, TrackDefinition
from utils.progress import tracked
from utils.types import ConeClass, ConeQuality, Mission, SourceTier
from vehicle import VehicleState
from vision import (
    StereoMode,
    StereoPick,
    StereoRegion,
    default_mono_calibration,
    mono_depth_from_box,
    mono_depth_pnp,
    stereo_depth,
)

if TYPE_CHECKING:
    from collections.abc import Callable

    from config import RunConfig
    from lidar import LidarTierParams
    from observation import ConeObservation
    from perception import TierResult
    from sensors import DetectedBox, StereoTruth
    from utils.types import DepthRow


log = logging.getLogger(__name__)

FALLEN_FRACTION: Final = 0.15
OUTLIER_PCT: Final = 20.0
THRESHOLDS_PCT: Final = (5.0, 10.0, 20.0)
DEPTH_COLUMNS: Final = ("cone_id", "true_depth_m", "est_depth_m", "tier", "variant", "rel_err_pct")

MONO_STEREO: Final = "mono_stereo_fusion"
THREE_TIER: Final = "three_tier"
STEREO_MODES: Final = tuple(StereoMode(r, p) for r in StereoRegion for p in StereoPick)


def _scene_cone(cone_id: int, config: RunConfig, rng: np.random.Generator) -> TrackCone:
    bench, mount = config.bench, config.camera.mount
    r = rng.uniform(bench.range_min, bench.range_max)
    bearing = math.radians(rng.uniform(-bench.bearing_max_deg, bench.bearing_max_deg))
    cls = list(ConeClass)[int(rng.integers(len(ConeClass)))]
    fallen = bool(rng.random() < FALLEN_FRACTION)
    log.debug("cone %d: %s at %.2f m, %.1f deg, fallen=%s", cone_id, cls, r, math.degrees(bearing), fallen)
    return TrackCone(mount[0] + r * math.cos(bearing), mount[1] + r * math.sin(bearing), cls, fallen)


def _try(fn: Callable[[], ConeObservation]) -> ConeObservation | None:
    try:
        return fn()
    except (PerceptionError, GeometryError) as e:
        log.debug("variant dropped a cone: %s", e)
        return None


def _camera_variants(
    box: DetectedBox, truth: StereoTruth, config: RunConfig, perception: PerceptionConfig, rng: np.random.Generator
) -> dict[tuple[str, str], ConeObservation | None]:
    rig = config.camera
    k, c2v = rig.intrinsics, rig.camera_to_vehicle()
    noise = config.effective_noise.stereo
    out: dict[tuple[str, str], ConeObservation | None] = {
        (SourceTier.MONOCULAR, "good_cones"): _try(lambda: mono_depth_from_box(box, k, perception.mono, c2v)),
        (SourceTier.MONOCULAR, "all_cones"): _try(
            lambda: mono_depth_from_box(box, k, perception.mono, c2v, require_good=False)
        ),
        (SourceTier.MONOCULAR, "pnp"): _try(lambda: mono_depth_pnp(box, k, c2v)),
    }
    for mode in STEREO_MODES:
        out[SourceTier.STEREO, str(mode)] = _try(
            lambda mode=mode: stereo_depth(  # type: ignore[misc]
                box, truth, k, rig.baseline, c2v, mode=mode, noise=noise, rng=rng
            ).observation
        )
    if box.quality is ConeQuality.GOOD:
        out[MONO_STEREO, str(perception.stereo_mode)] = out[SourceTier.MONOCULAR, "good_cones"]
    else:
        out[MONO_STEREO, str(perception.stereo_mode)] = out[SourceTier.STEREO, str(perception.stereo_mode)]
    return out


def _lidar_variant(params: LidarTierParams) -> str:
    return f"cluster_{params.statistic}" + ("_axis" if params.axis_correction else "")


def _fused(tiered: TierResult) -> ConeObservation | None:
    return next((o for o in tiered.observations if o.source_tier is SourceTier.LIDAR_FUSION), None)


def bench_cone(cone_id: int, config: RunConfig, perception: PerceptionConfig) -> list[DepthRow]:
    """Every variant on one freshly drawn cone; the cone's RNG depends only on (seed, cone_id)."""
    rng = np.random.default_rng([config.seed & (2**32 - 1), cone_id])
    cone = _scene_cone(cone_id, config, rng)
    world = TrackDefinition(Mission.AUTOCROSS, (cone,), Pose2D(), 3.0)
    vehicle = VehicleState(Pose2D(), wheelbase=config.vehicle.wheelbase)
    noise = config.effective_noise

    cloud = simulate_lidar(world, vehicle, config.lidar, noise.lidar, rng, view_from=config.camera.mount[:2])
    detections = simulate_stereo_detector(world, vehicle, config.camera, replace(noise.detector, miss_slope=0.0), rng)
    if not detections.boxes:
        log.debug("cone %d produced no box", cone_id)
        return []
    box, truth, z = detections.boxes[0], detections.truth[0], detections.depths[0]

    frame = PerceptionFrame(0.0, cloud, 0.0, detections)
    tiered = three_tier_pipeline(frame, perception, config.camera, config.lidar, rng)
    lidar = perception.lidar
    other = replace(perception, lidar=replace(lidar, axis_correction=not lidar.axis_correction))
    results: dict[tuple[str, str], ConeObservation | None] = {
        (SourceTier.LIDAR_FUSION, _lidar_variant(lidar)): _fused(tiered),
        (SourceTier.LIDAR_FUSION, _lidar_variant(other.lidar)): None,
    }
    results.update(_camera_variants(box, truth, config, perception, rng))
    results[THREE_TIER, "routed"] = tiered.observations[0] if tiered.observations else None
    results[SourceTier.LIDAR_FUSION, _lidar_variant(other.lidar)] = _fused(
        three_tier_pipeline(frame, other, config.camera, config.lidar, rng)
    )

    return [
        {
            "cone_id": cone_id,
            "true_depth_m": z,
            "est_depth_m": obs.depth,
            "tier": str(tier),
            "variant": variant,
            "rel_err_pct": 100.0 * (obs.depth - z) / z,
        }
        for (tier, variant), obs in results.items()
        if obs is not None
    ]


def benchmark_depth(config: RunConfig, *, show: bool = True) -> pd.DataFrame:
    """Per-cone depth errors for every variant over `config.bench.n_cones` static scenes."""
    bench = config.bench
    mono = calibrate_mono(config.camera) if config.perception.calibrate_mono else default_mono_calibration()
    settings = config.perception
    perception = PerceptionConfig(settings.lidar, mono, settings.stereo_mode, config.effective_noise.stereo)
    ids = range(bench.n_cones)

    rows: list[DepthRow] = []
    if bench.workers == 1:
        serial = (bench_cone(i, config, perception) for i in ids)
        for _, cone_rows in tracked(serial, "depth", total=bench.n_cones, show=show):
            rows += cone_rows
    else:
        with ProcessPoolExecutor(bench.workers) as pool:
            results = pool.map(bench_cone, ids, repeat(config), repeat(perception), chunksize=16)
            for _, cone_rows in tracked(results, "depth", total=bench.n_cones, show=show):
                rows += cone_rows
    log.info("depth benchmark: %d estimates over %d cones", len(rows), bench.n_cones)
    return pd.DataFrame(rows, columns=list(DEPTH_COLUMNS))


def depth_summary(df: pd.DataFrame) -> pd.DataFrame:
    """Mean |relative error| and the cumulative share of cones under each threshold, per variant.

    The outlier-free mean leaves out cones above 20 % error.
    """
    err = df.assign(abs_err=df["rel_err_pct"].abs())
    grouped = err.groupby(["tier", "variant"], sort=False)["abs_err"]
    out = grouped.agg(n="size", mean_abs_err_pct="mean").reset_index()
    out["mean_no_outliers_pct"] = grouped.apply(lambda s: s[s <= OUTLIER_PCT].mean()).to_numpy()
    for thr in THRESHOLDS_PCT:
        share = grouped.apply(lambda s, thr=thr: 100.0 * (s < thr).mean())  # type: ignore[misc]
        out[f"lt{thr:g}_pct"] = share.to_numpy()
    return out

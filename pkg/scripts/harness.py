"""Closed-loop mission runner.

One logical clock at the sim rate drives everything: the LiDAR sweeps on perception ticks,
the camera a fixed number of sim ticks later, and the synchronizer pairs the two into a
perception frame. Control runs on its own tick multiple. In single mode the whole run is
deterministic for a given seed.
"""

from __future__ import annotations

import io
import json
import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Final

import numpy as np
import pandas as pd

from config import ConfigError, HarnessError
from control import (
    PathExhausted,
    PidState,
    SupervisorContext,
    emergency_command,
    mission_supervisor,
    pid_speed,
    project_onto_path,
    pure_pursuit,
    stanley,
)
from geometry import Pose2D, cone_geometry, normalize_angle
from perception import PerceptionConfig, PerceptionFrame, calibrate_mono, three_tier_pipeline
from planning import (
    PlanningError,
    WaypointPath,
    delaunay_triangulate,
    extract_midline,
    min_curvature_refine,
    plan_acceleration,
)
from sensors import simulate_lidar, simulate_odometry, simulate_stereo_detector
from skidpad import CENTER, SkidpadSegment, SkidpadState, skidpad_paths, skidpad_step
from slam import ParallelEkfSlam, landmark_table
from track import TrackSpec, generate_track, load_track
from utils.files import FLOAT_FORMAT, write_csv, write_json
from utils.types import ConeClass, Mission, MissionStatus
from vehicle import ControlCommand, VehicleState, footprint_hits_disc, step_vehicle
from vision import default_mono_calibration

if TYPE_CHECKING:
    from pathlib import Path

    from config import RunConfig
    from geometry import FloatArray, PointCloud
    from observation import ConeObservation
    from sensors import DetectorOutput, OdometrySample
    from skidpad import SkidpadPaths
    from track import TrackDefinition
    from utils.types import MapTraceRow, ObservationRow, RunSummary, Seconds, TickRow


log = logging.getLogger(__name__)

LAP_MIN_TRAVEL: Final = 20.0
HIT_SEARCH_RADIUS: Final = 4.0
SUMMARY_TOL: Final = 1e-9

TICK_COLUMNS: Final = (
    "t", "true_x", "true_y", "true_heading", "true_speed", "est_x", "est_y", "est_heading",
    "dr_x", "dr_y", "dr_heading", "cov_trace", "steering_rad", "accel_mps2", "cross_track_m",
    "heading_err_rad", "status", "segment", "laps", "cones_hit", "n_landmarks",
)  # fmt: skip
OBSERVATION_COLUMNS: Final = ("t", "cone_id", "tier", "true_depth_m", "est_depth_m", "rel_err_pct")
MAP_TRACE_COLUMNS: Final = ("t", "n_landmarks", "landmark_mse_m2")
# measured with perf_counter, so it differs between otherwise identical runs; replay never reads it
TIMING_COLUMNS: Final = ("t", "n_landmarks", "n_observations", "wall_clock_s")


# ----------------------------------------------------------------------------------------------------------------------
# Frame assembly


@dataclass(slots=True)
class SensorBuffers:
    lidar: list[tuple[Seconds, PointCloud]] = field(default_factory=list)
    camera: list[tuple[Seconds, DetectorOutput]] = field(default_factory=list)


def assemble_frame(buffers: SensorBuffers, sync_window: Seconds = 0.02) -> PerceptionFrame | None:
    """Pair the newest LiDAR sweep with the newest detection set if they are within `sync_window`.

    None means skip. A pairing consumes both buffers; a skip keeps only the newest entry of each.
    """
    if not buffers.lidar or not buffers.camera:
        return None
    t_lidar, cloud = buffers.lidar[-1]
    t_camera, detections = buffers.camera[-1]
    if abs(t_lidar - t_camera) > sync_window + 1e-12:
        del buffers.lidar[:-1]
        del buffers.camera[:-1]
        return None
    buffers.lidar.clear()
    buffers.camera.clear()
    return PerceptionFrame(t_lidar, cloud, t_camera, detections)


# ----------------------------------------------------------------------------------------------------------------------
# Ground truth bookkeeping


@dataclass(slots=True)
class LapCounter:
    """Counts forward crossings of the line through `line` perpendicular to its heading."""

    line: Pose2D
    half_width: float
    min_travel: float = LAP_MIN_TRAVEL
    laps: int = 0
    _prev_x: float | None = None
    _travel: float = 0.0
    _last: tuple[float, float] | None = None

    def update(self, pose: Pose2D) -> bool:
        lx, ly = self.line.to_local(pose.x, pose.y)
        if self._last is not None:
            self._travel += math.hypot(pose.x - self._last[0], pose.y - self._last[1])
        self._last = (pose.x, pose.y)
        crossed = (
            self._prev_x is not None
            and self._prev_x < 0.0 <= lx
            and abs(ly) <= self.half_width
            and self._travel >= self.min_travel
        )
        self._prev_x = lx
        if crossed:
            self.laps += 1
            self._travel = 0.0
        return crossed


def _finish_line(track: TrackDefinition) -> Pose2D:
    gates = [c.x for c in track.cones if c.cls is ConeClass.ORANGE_BIG]
    return Pose2D(max(gates) if gates else 0.0, 0.0, 0.0)


def _reference_lines(track: TrackDefinition, paths: SkidpadPaths | None) -> list[tuple[FloatArray, bool]]:
    if paths is not None:
        return [(p.points, p.closed) for p in (paths.entry, paths.right, paths.left, paths.exit)]
    if len(track.centerline) >= 2:  # noqa: PLR2004
        closed = track.mission in {Mission.AUTOCROSS, Mission.TRACKDRIVE}
        return [(np.asarray(track.centerline, dtype=float), closed)]
    return []


def _off_track(pose: Pose2D, refs: list[tuple[FloatArray, bool]], half_width: float) -> float:
    if not refs:
        return 0.0
    d = min(abs(project_onto_path(pts, pose.x, pose.y, closed=closed).cross_track) for pts, closed in refs)
    return max(0.0, d - half_width)


def _dead_reckon(pose: Pose2D, odom: OdometrySample, dt: Seconds) -> Pose2D:
    return Pose2D(
        pose.x + odom.speed * math.cos(pose.heading) * dt,
        pose.y + odom.speed * math.sin(pose.heading) * dt,
        normalize_angle(pose.heading + odom.yaw_rate * dt),
    )


def landmark_mse(landmarks: FloatArray, cones: FloatArray) -> float:
    """Mean squared distance of each landmark to its nearest ground-truth cone."""
    if landmarks.size == 0 or cones.size == 0:
        return 0.0
    d2 = ((landmarks[:, None, :] - cones[None, :, :]) ** 2).sum(axis=2)
    return float(d2.min(axis=1).mean())


# ----------------------------------------------------------------------------------------------------------------------
# Telemetry


@dataclass(frozen=True, slots=True, eq=False)
class RunTelemetry:
    ticks: pd.DataFrame
    observations: pd.DataFrame
    map_trace: pd.DataFrame
    slam_timing: pd.DataFrame
    landmarks: list[dict[str, Any]]
    path: WaypointPath | None
    summary: RunSummary


def _roundtrip(df: pd.DataFrame) -> pd.DataFrame:
    """The frame exactly as it reads back from its CSV."""
    return pd.read_csv(io.StringIO(df.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")))


def _lap_times(ticks: pd.DataFrame) -> list[float]:
    times, prev_t = [], 0.0
    laps = ticks["laps"].to_numpy()
    t = ticks["t"].to_numpy()
    for lap in range(1, int(laps.max(initial=0)) + 1):
        at = float(t[np.argmax(laps >= lap)])
        times.append(at - prev_t)
        prev_t = at
    return times


def _rmse(ticks: pd.DataFrame, prefix: str) -> float:
    if ticks.empty:
        return 0.0
    err2 = (ticks[f"{prefix}_x"] - ticks["true_x"]) ** 2 + (ticks[f"{prefix}_y"] - ticks["true_y"]) ** 2
    return float(math.sqrt(err2.mean()))


def summarize(ticks: pd.DataFrame, observations: pd.DataFrame, map_trace: pd.DataFrame) -> RunSummary:
    """Run summary, computed only from the per-tick, observation and map-trace records."""
    racing = ticks[ticks["status"] == MissionStatus.RACING.value]
    segments = ticks["segment"].fillna("").astype(str)
    collapsed = [s for i, s in enumerate(segments) if s and (i == 0 or s != segments.iloc[i - 1])]
    by_tier = observations.groupby("tier")["rel_err_pct"] if not observations.empty else None
    return {
        "status": str(ticks["status"].iloc[-1]) if not ticks.empty else MissionStatus.STARTING.value,
        "sim_time_s": float(ticks["t"].iloc[-1]) if not ticks.empty else 0.0,
        "laps": int(ticks["laps"].max()) if not ticks.empty else 0,
        "lap_times_s": _lap_times(ticks) if not ticks.empty else [],
        "cones_hit": int(ticks["cones_hit"].iloc[-1]) if not ticks.empty else 0,
        "mean_abs_cross_track_m": float(racing["cross_track_m"].abs().mean()) if not racing.empty else 0.0,
        "pose_rmse_slam_m": _rmse(ticks, "est"),
        "pose_rmse_dead_reckoning_m": _rmse(ticks, "dr"),
        "landmark_mse_m2": float(map_trace["landmark_mse_m2"].iloc[-1]) if not map_trace.empty else 0.0,
        "n_landmarks": int(map_trace["n_landmarks"].iloc[-1]) if not map_trace.empty else 0,
        "tier_counts": {str(k): int(v) for k, v in by_tier.size().items()} if by_tier is not None else {},
        "tier_mean_abs_err_pct": (
            {str(k): float(v) for k, v in by_tier.apply(lambda s: s.abs().mean()).items()}
            if by_tier is not None
            else {}
        ),
        "segments": collapsed,
    }


def write_telemetry(tel: RunTelemetry, out_dir: Path) -> list[Path]:
    ticks = tel.ticks
    commands = ticks[["t", "steering_rad", "accel_mps2", "cross_track_m", "heading_err_rad", "status"]].rename(
        columns={"status": "mode"}
    )
    poses = ticks[[c for c in TICK_COLUMNS if c == "t" or c.endswith(("_x", "_y", "_heading"))]]
    written = [
        write_csv(ticks, out_dir / "telemetry.csv"),
        write_csv(commands, out_dir / "commands.csv"),
        write_csv(poses, out_dir / "pose_trace.csv"),
        write_csv(tel.observations, out_dir / "observations.csv"),
        write_csv(tel.map_trace, out_dir / "map_trace.csv"),
        write_csv(tel.slam_timing, out_dir / "slam_timing.csv"),
        write_json(tel.landmarks, out_dir / "map.json"),
        write_json(tel.summary, out_dir / "summary.json"),
    ]
    if tel.path is not None:
        written.append(write_csv(tel.path.to_frame(), out_dir / "path.csv"))
    for path in written:
        log.debug("wrote %s", path)
    return written


def _close(a: Any, b: Any) -> bool:  # noqa: ANN401
    if isinstance(a, dict) and isinstance(b, dict):
        return a.keys() == b.keys() and all(_close(a[k], b[k]) for k in a)
    if isinstance(a, list) and isinstance(b, list):
        return len(a) == len(b) and all(_close(x, y) for x, y in zip(a, b, strict=True))
    if isinstance(a, (int, float)) and isinstance(b, (int, float)):
        return math.isclose(a, b, rel_tol=SUMMARY_TOL, abs_tol=SUMMARY_TOL) or (math.isnan(a) and math.isnan(b))
    return a == b


def replay_check(telemetry: Path) -> tuple[bool, list[str]]:
    """Recompute the summary from the CSV records next to `telemetry` and compare with summary.json.

    Only telemetry.csv, observations.csv and map_trace.csv are read; slam_timing.csv holds
    wall-clock times and is left out.
    """
    run_dir = telemetry.parent
    try:
        ticks = pd.read_csv(telemetry)
        observations = pd.read_csv(run_dir / "observations.csv")
        map_trace = pd.read_csv(run_dir / "map_trace.csv")
        stored = json.loads((run_dir / "summary.json").read_text(encoding="utf-8"))
    except (FileNotFoundError, json.JSONDecodeError, pd.errors.ParserError) as e:
        msg = f"cannot replay {telemetry}: {e}"
        raise HarnessError(msg) from e
    recomputed = summarize(ticks, observations, map_trace)
    mismatched = [k for k, v in recomputed.items() if k not in stored or not _close(v, stored[k])]
    mismatched += [k for k in stored if k not in recomputed]
    return not mismatched, mismatched


# ----------------------------------------------------------------------------------------------------------------------
# Run


def _load_world(config: RunConfig) -> TrackDefinition:
    if config.track is None:
        return generate_track(TrackSpec(config.mission, seed=config.seed))
    track = load_track(config.track)
    if track.mission is not config.mission:
        raise ConfigError("mission", f"config says {config.mission} but the track file is {track.mission}")
    return track


class _MissionRun:
    def __init__(self, config: RunConfig) -> None:
        self.cfg = config
        self.track = _load_world(config)
        self.noise = config.effective_noise
        streams = np.random.SeedSequence(config.seed & (2**64 - 1)).spawn(4)
        self.rng_odom, self.rng_lidar, self.rng_det, self.rng_perc = (np.random.default_rng(s) for s in streams)

        self.rig, self.lidar, self.vp = config.camera, config.lidar, config.vehicle
        mono = calibrate_mono(self.rig) if config.perception.calibrate_mono else default_mono_calibration()
        settings = config.perception
        self.perception = PerceptionConfig(settings.lidar, mono, settings.stereo_mode, self.noise.stereo)

        start = self.track.start_pose
        self.vehicle = VehicleState(start, wheelbase=self.vp.wheelbase)
        self.dr_pose = start
        self.slam = ParallelEkfSlam(
            start,
            config.slam.params,
            association=config.association,
            mode=config.mode,
            delay=config.slam.delay_ticks / config.rates.perception_hz,
        )
        self.buffers = SensorBuffers()
        self.status = MissionStatus.STARTING
        self.pid = PidState()
        self.command = ControlCommand()
        self.path: WaypointPath | None = None
        self.raceline = False
        self.next_plan_t = 0.0
        self.last_perception_t = 0.0
        self.accel_cones: list[tuple[float, float, ConeClass]] = []

        self.skidpad: SkidpadState | None = None
        self.skid_paths: SkidpadPaths | None = None
        if config.mission is Mission.SKIDPAD:
            self.skid_paths = skidpad_paths(self.track, spacing=config.planning.spacing, profile=config.planning.speed)
            self.skidpad = SkidpadState(first=config.planning.first_circle)
            self.exit_x = self.track.trigger(CENTER).x + abs(self.track.trigger("right_1").y) / 2
        half = self.track.track_width / 2
        if config.mission is Mission.ACCELERATION:
            self.laps = LapCounter(_finish_line(self.track), self.track.track_width, min_travel=0.0)
        else:
            self.laps = LapCounter(start, self.track.track_width)
        self.refs = _reference_lines(self.track, self.skid_paths)
        self.half_width = half
        self.cones_xy = self.track.cone_array()
        self.cone_radius = np.array([cone_geometry(c.cls).base_radius for c in self.track.cones])
        self.hit: set[int] = set()
        self.done_laps = 0

        self.ticks: list[TickRow] = []
        self.obs_rows: list[ObservationRow] = []
        self.map_rows: list[MapTraceRow] = []

    # -- sensing ---------------------------------------------------------------------------------------------------

    def _sense(self, k: int, t: Seconds) -> list[ConeObservation] | None:
        every = self.cfg.rates.perception_every
        if k % every == 0:
            cloud = simulate_lidar(
                self.track, self.vehicle, self.lidar, self.noise.lidar, self.rng_lidar, view_from=self.rig.mount[:2]
            )
            self.buffers.lidar.append((t, cloud))
        if k % every != self.cfg.rates.camera_delay_ticks % every:
            return None
        det = simulate_stereo_detector(self.track, self.vehicle, self.rig, self.noise.detector, self.rng_det)
        self.buffers.camera.append((t, det))
        frame = assemble_frame(self.buffers, self.cfg.rates.sync_window_s)
        if frame is None:
            return None
        self.last_perception_t = t
        result = three_tier_pipeline(frame, self.perception, self.rig, self.lidar, self.rng_perc)
        truth = {box.cone_id: z for box, z in zip(det.boxes, det.depths, strict=True)}
        for obs in result.observations:
            z = truth.get(obs.cone_id, math.nan)
            self.obs_rows.append(
                {
                    "t": t,
                    "cone_id": obs.cone_id,
                    "tier": obs.source_tier.value,
                    "true_depth_m": z,
                    "est_depth_m": obs.depth,
                    "rel_err_pct": 100.0 * (obs.depth - z) / z,
                }
            )
        return list(result.observations)

    def _on_frame(self, t: Seconds, observations: list[ConeObservation]) -> None:
        self.slam.submit(observations, t)
        if self.cfg.mission is Mission.ACCELERATION:
            pose = self.dr_pose
            self.accel_cones = [(*pose.to_ground(*o.local_xy), o.cls) for o in observations]
        state = self.slam.state
        self.map_rows.append(
            {
                "t": t,
                "n_landmarks": state.n_landmarks,
                "landmark_mse_m2": landmark_mse(state.landmarks(), self.cones_xy),
            }
        )

    # -- planning --------------------------------------------------------------------------------------------------

    def _estimated_pose(self) -> Pose2D:
        return self.dr_pose if self.cfg.mission is Mission.ACCELERATION else self.slam.state.pose

    def _map_cones(self) -> list[tuple[float, float, ConeClass]]:
        state = self.slam.state
        return [
            (*state.landmark(j), meta.cls)
            for j, meta in enumerate(state.landmark_meta)
            if meta.n_obs >= self.cfg.planning.min_landmark_obs
        ]

    def _plan(self, t: Seconds) -> None:
        pcfg = self.cfg.planning
        pose = self._estimated_pose()
        if self.skidpad is not None and self.skid_paths is not None:
            self.skidpad, self.path = skidpad_step(self.skidpad, (pose.x, pose.y), self.track.triggers, self.skid_paths)
            if self.skidpad.segment is SkidpadSegment.EXIT_LINE and pose.x >= self.exit_x:
                self.done_laps = 1
            return
        if self.raceline or t + 1e-9 < self.next_plan_t:
            return
        self.next_plan_t = t + pcfg.replan_period_s
        try:
            if self.cfg.mission is Mission.ACCELERATION:
                self.path = plan_acceleration(
                    self.accel_cones, spacing=pcfg.spacing, extend=30.0, heading=pose.heading, profile=pcfg.speed
                )
                return
            tri = delaunay_triangulate(self._map_cones())
            midline = extract_midline(
                tri, pose, max_edge=pcfg.max_edge, max_step=pcfg.max_step, spacing=pcfg.spacing, profile=pcfg.speed
            )
        except PlanningError as e:
            log.debug("t=%.2f: keeping the previous path (%s)", t, e)
            return
        self.path = midline
        if self.cfg.mission is Mission.TRACKDRIVE and pcfg.refine and self.laps.laps >= 1 and midline.closed:
            try:
                self.path = min_curvature_refine(midline, self.track.track_width, pcfg.margin, profile=pcfg.speed)
            except PlanningError as e:
                log.warning("racing line refinement failed: %s", e)
                return
            self.raceline = True
            log.info("t=%.2f: racing line published (%d points, %.1f m)", t, len(self.path), self.path.length)

    # -- control ---------------------------------------------------------------------------------------------------

    def _control(self, t: Seconds, dt: Seconds) -> None:
        odom = simulate_odometry(self.vehicle, self.noise.odometry, t, self.rng_odom)
        self.slam.predict(odom, dt)
        self.slam.poll(t)
        self.dr_pose = _dead_reckon(self.dr_pose, odom, dt)
        self._plan(t)

        laps = self.done_laps if self.cfg.mission is Mission.SKIDPAD else self.laps.laps
        ctx = SupervisorContext(
            t=t,
            mission=self.cfg.mission,
            last_perception_t=self.last_perception_t,
            pose_cov_trace=self.slam.state.pose_cov_trace(),
            off_track=_off_track(self.vehicle.pose, self.refs, self.half_width),
            laps=laps,
            has_path=self.path is not None,
        )
        self.status = mission_supervisor(self.status, ctx, self.cfg.control.supervisor)
        self.command = self._command(t, odom, dt)
        self._record(t)

    def _command(self, t: Seconds, odom: OdometrySample, dt: Seconds) -> ControlCommand:
        if self.status is MissionStatus.EMERGENCY_STOP:
            return emergency_command(self.vp, t)
        limits = (-self.vp.a_brake_max, self.vp.a_accel_max)
        if self.status is not MissionStatus.RACING or self.path is None:
            accel, self.pid = pid_speed(0.0, odom.speed, self.pid, dt, self.cfg.control.pid, limits)
            return ControlCommand(0.0, accel, t)

        pose = self._estimated_pose()
        est = VehicleState(pose, odom.speed, odom.yaw_rate, self.vehicle.steering_angle, self.vp.wheelbase)
        ccfg = self.cfg.control
        try:
            if self.cfg.controller == "stanley":
                steer = stanley(est, self.path, ccfg.stanley_k, self.vp, v_soft=ccfg.v_soft, t=t).steering_angle
            else:
                steer = pure_pursuit(est, self.path, ccfg.k_lookahead, ccfg.l_min, self.vp, t=t).steering_angle
            target = float(self.path.speed[self.path.nearest_index(est.pose.x, est.pose.y)])
        except PathExhausted:
            steer, target = 0.0, 0.0
        accel, self.pid = pid_speed(target, odom.speed, self.pid, dt, ccfg.pid, limits)
        return ControlCommand(steer, accel, t).clamped(self.vp)

    def _record(self, t: Seconds) -> None:
        true, est, dr = self.vehicle.pose, self.slam.state.pose, self.dr_pose
        cross, heading_err = 0.0, 0.0
        if self.path is not None:
            proj = project_onto_path(self.path.points, true.x, true.y, closed=self.path.closed)
            cross, heading_err = proj.cross_track, normalize_angle(proj.heading - true.heading)
        self.ticks.append(
            {
                "t": t,
                "true_x": true.x,
                "true_y": true.y,
                "true_heading": true.heading,
                "true_speed": self.vehicle.speed,
                "est_x": est.x,
                "est_y": est.y,
                "est_heading": est.heading,
                "dr_x": dr.x,
                "dr_y": dr.y,
                "dr_heading": dr.heading,
                "cov_trace": self.slam.state.pose_cov_trace(),
                "steering_rad": self.command.steering_angle,
                "accel_mps2": self.command.acceleration,
                "cross_track_m": cross,
                "heading_err_rad": heading_err,
                "status": self.status.value,
                "segment": self.skidpad.segment.value if self.skidpad is not None else "",
                "laps": self.done_laps if self.cfg.mission is Mission.SKIDPAD else self.laps.laps,
                "cones_hit": len(self.hit),
                "n_landmarks": self.slam.state.n_landmarks,
            }
        )

    # -- world -----------------------------------------------------------------------------------------------------

    def _check_hits(self) -> None:
        pose = self.vehicle.pose
        d = np.hypot(self.cones_xy[:, 0] - pose.x, self.cones_xy[:, 1] - pose.y)
        for i in np.flatnonzero(d <= HIT_SEARCH_RADIUS):
            if int(i) in self.hit:
                continue
            if footprint_hits_disc(self.vehicle, self.vp, float(self.cones_xy[i, 0]), float(self.cones_xy[i, 1]),
                                   float(self.cone_radius[i])):
                self.hit.add(int(i))
                log.info("cone %d hit at (%.2f, %.2f)", i, self.cones_xy[i, 0], self.cones_xy[i, 1])

    def run(self) -> RunTelemetry:
        rates = self.cfg.rates
        dt = rates.dt
        n_ticks = math.ceil(self.cfg.time_cap_s * rates.sim_hz - 1e-9)
        with self.slam:
            for k in range(n_ticks):
                t = k * dt
                observations = self._sense(k, t)
                if observations is not None:
                    self._on_frame(t, observations)
                if k % rates.control_every == 0:
                    self._control(t, rates.control_every * dt)
                    if self.status in {MissionStatus.FINISHING, MissionStatus.EMERGENCY_STOP}:
                        break
                self.vehicle = step_vehicle(self.vehicle, self.command, dt, self.vp)
                self._check_hits()
                self.laps.update(self.vehicle.pose)
            else:
                log.warning("time cap of %.1f s reached in status %s", self.cfg.time_cap_s, self.status)
            self.slam.flush()
        return self._telemetry()

    def _telemetry(self) -> RunTelemetry:
        ticks = _roundtrip(pd.DataFrame(self.ticks, columns=list(TICK_COLUMNS)))
        observations = _roundtrip(pd.DataFrame(self.obs_rows, columns=list(OBSERVATION_COLUMNS)))
        map_trace = _roundtrip(pd.DataFrame(self.map_rows, columns=list(MAP_TRACE_COLUMNS)))
        timing = pd.DataFrame(
            [(u.t, u.n_landmarks, u.n_observations, u.seconds) for u in self.slam.timings],
            columns=list(TIMING_COLUMNS),
        )
        return RunTelemetry(
            ticks,
            observations,
            map_trace,
            timing,
            landmark_table(self.slam.state),
            self.path,
            summarize(ticks, observations, map_trace),
        )


def run_mission(config: RunConfig) -> RunTelemetry:
    """Drive the closed loop until Finishing, EmergencyStop or the time cap."""
    log.info("running %s (seed %d, %s, %s, %s mode)", config.mission, config.seed, config.controller,
             config.association, config.mode)
    return _MissionRun(config).run()

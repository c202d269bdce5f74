"""EKF SLAM over the 2-D pose and cone landmarks.

State vector is `[x, y, heading, l1x, l1y, l2x, l2y, ...]`. Measurements are
range/bearing from the vehicle origin. Association is either greedy Euclidean
nearest neighbour or joint compatibility branch and bound (JCBB).

`ParallelEkfSlam` splits the filter the way the car runs it: the motion side
propagates the pose at control rate, while one measurement task at a time corrects
an immutable snapshot; the correction is merged back with `parallel_correction`.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cache
from typing import TYPE_CHECKING, Final, Literal

import numpy as np
from scipy.stats import chi2

from geometry import Pose2D, normalize_angle
from utils.types import ConeClass, SourceTier

if TYPE_CHECKING:
    from collections.abc import Sequence

    from geometry import FloatArray
    from observation import ConeObservation
    from sensors import OdometrySample
    from utils.types import Seconds


log = logging.getLogger(__name__)

POSE_DIM: Final = 3
MAX_JCBB_OBSERVATIONS: Final = 50
MIN_RANGE: Final = 1e-6  # landmarks closer than this are treated as this far

type AssociationMethod = Literal["nn", "jcbb"]


class SlamError(RuntimeError):
    pass


class FrameTooLarge(SlamError):
    pass


@cache
def chi2_gate(dof: int, confidence: float) -> float:
    return float(chi2.ppf(confidence, dof))


# ----------------------------------------------------------------------------------------------------------------------
# State


@dataclass(frozen=True, slots=True)
class LandmarkMeta:
    histogram: tuple[int, int, int, int] = (0, 0, 0, 0)

    @property
    def n_obs(self) -> int:
        return sum(self.histogram)

    @property
    def cls(self) -> ConeClass:
        return list(ConeClass)[int(np.argmax(self.histogram))]

    def observed(self, cls: ConeClass) -> LandmarkMeta:
        h = list(self.histogram)
        h[cls.index] += 1
        return LandmarkMeta((h[0], h[1], h[2], h[3]))


@dataclass(frozen=True, slots=True, eq=False)
class SlamState:
    mean: FloatArray
    covariance: FloatArray
    landmark_meta: tuple[LandmarkMeta, ...] = ()

    def __post_init__(self) -> None:
        n = self.mean.shape[0]
        if n != POSE_DIM + 2 * len(self.landmark_meta) or self.covariance.shape != (n, n):
            msg = (
                f"state of size {n} does not match {len(self.landmark_meta)} landmarks"
                f" / covariance {self.covariance.shape}"
            )
            raise SlamError(msg)

    @classmethod
    def initial(cls, pose: Pose2D, pose_sigma: tuple[float, float, float] = (0.0, 0.0, 0.0)) -> SlamState:
        return cls(pose.as_array(), np.diag(np.square(pose_sigma)).astype(float))

    @property
    def pose(self) -> Pose2D:
        return Pose2D(float(self.mean[0]), float(self.mean[1]), float(self.mean[2]))

    @property
    def n_landmarks(self) -> int:
        return len(self.landmark_meta)

    def landmark(self, j: int) -> tuple[float, float]:
        i = POSE_DIM + 2 * j
        return float(self.mean[i]), float(self.mean[i + 1])

    def landmarks(self) -> FloatArray:
        return self.mean[POSE_DIM:].reshape(-1, 2)

    def landmark_cov(self, j: int) -> FloatArray:
        i = POSE_DIM + 2 * j
        return self.covariance[i : i + 2, i : i + 2]

    def pose_cov_trace(self) -> float:
        return float(np.trace(self.covariance[:POSE_DIM, :POSE_DIM]))

    def with_pose(self, pose: Pose2D) -> SlamState:
        mean = self.mean.copy()
        mean[:POSE_DIM] = pose.as_array()
        return SlamState(mean, self.covariance, self.landmark_meta)


@dataclass(frozen=True, slots=True)
class SlamParams:
    q_xy: float = 0.01  # process noise density on x and y, m^2/s
    q_heading: float = 0.001  # rad^2/s
    range_sigma_min: float = 0.05
    range_sigma_rel: dict[SourceTier, float] = field(
        default_factory=lambda: {SourceTier.LIDAR_FUSION: 0.01, SourceTier.MONOCULAR: 0.06, SourceTier.STEREO: 0.10}
    )
    bearing_sigma: float = 0.02
    nn_gate: float = 1.5
    jcbb_confidence: float = 0.95
    class_gate: bool = True
    new_landmark_inflation: float = 2.0
    max_obs_range: float = 12.0

    def process_noise(self, dt: Seconds) -> FloatArray:
        return np.diag([self.q_xy, self.q_xy, self.q_heading]) * dt

    def measurement_noise(self, obs: ConeObservation) -> FloatArray:
        rel = self.range_sigma_rel.get(obs.source_tier, 0.1)
        sr = max(self.range_sigma_min, rel * obs.range)
        return np.diag([sr * sr, self.bearing_sigma**2])


# ----------------------------------------------------------------------------------------------------------------------
# Models


def motion_update(state: SlamState, odom: OdometrySample, dt: Seconds, q: FloatArray | None = None) -> SlamState:
    """Unicycle prediction of the pose; only pose rows/columns of the covariance change."""
    if dt <= 0:
        msg = f"dt must be positive, got {dt}"
        raise SlamError(msg)
    x, y, th = state.mean[:POSE_DIM]
    v, w = odom.speed, odom.yaw_rate
    mean = state.mean.copy()
    mean[0] = x + v * math.cos(th) * dt
    mean[1] = y + v * math.sin(th) * dt
    mean[2] = normalize_angle(th + w * dt)

    g = np.array([[1.0, 0.0, -v * math.sin(th) * dt], [0.0, 1.0, v * math.cos(th) * dt], [0.0, 0.0, 1.0]])
    cov = state.covariance.copy()
    q = q if q is not None else SlamParams().process_noise(dt)
    cov[:POSE_DIM, :POSE_DIM] = g @ cov[:POSE_DIM, :POSE_DIM] @ g.T + q
    cov[:POSE_DIM, POSE_DIM:] = g @ cov[:POSE_DIM, POSE_DIM:]
    cov[POSE_DIM:, :POSE_DIM] = cov[:POSE_DIM, POSE_DIM:].T
    return SlamState(mean, cov, state.landmark_meta)


def measurement_model(state: SlamState, j: int) -> tuple[FloatArray, FloatArray]:
    """Predicted (range, bearing) of landmark `j` and its Jacobian w.r.t. `[x, y, heading, lx, ly]`."""
    x, y, th = state.mean[:POSE_DIM]
    lx, ly = state.landmark(j)
    dx, dy = lx - x, ly - y
    r = max(math.hypot(dx, dy), MIN_RANGE)
    q = r * r
    z = np.array([r, normalize_angle(math.atan2(dy, dx) - th)])
    h = np.array(
        [
            [-dx / r, -dy / r, 0.0, dx / r, dy / r],
            [dy / q, -dx / q, -1.0, -dy / q, dx / q],
        ]
    )
    return z, h


def _state_indices(j: int) -> FloatArray:
    i = POSE_DIM + 2 * j
    return np.array([0, 1, 2, i, i + 1])


def _innovation(z: FloatArray, z_hat: FloatArray) -> FloatArray:
    return np.array([z[0] - z_hat[0], normalize_angle(z[1] - z_hat[1])])


def _obs_vector(obs: ConeObservation) -> FloatArray:
    return np.array([obs.range, obs.bearing])


# ----------------------------------------------------------------------------------------------------------------------
# Association


@dataclass(frozen=True, slots=True)
class Association:
    """Per observation: a landmark index, or None for a new landmark."""

    pairings: tuple[int | None, ...]
    joint_distance: float = 0.0

    def __post_init__(self) -> None:
        paired = [j for j in self.pairings if j is not None]
        if len(paired) != len(set(paired)):
            msg = "a landmark is paired twice"
            raise SlamError(msg)

    @property
    def n_paired(self) -> int:
        return sum(j is not None for j in self.pairings)


def _compatible_class(state: SlamState, j: int, obs: ConeObservation, params: SlamParams) -> bool:
    return not params.class_gate or state.landmark_meta[j].cls is obs.cls


def associate_nn(
    state: SlamState, observations: Sequence[ConeObservation], params: SlamParams | None = None
) -> Association:
    """Greedy Euclidean nearest neighbour in the ground frame, in observation order, within `nn_gate`."""
    params = params or SlamParams()
    pose = state.pose
    landmarks = state.landmarks()
    claimed: set[int] = set()
    pairings: list[int | None] = []
    for obs in observations:
        gx, gy = pose.to_ground(*obs.local_xy)
        best, best_d = None, params.nn_gate
        if landmarks.size:
            dists = np.hypot(landmarks[:, 0] - gx, landmarks[:, 1] - gy)
            for j in np.argsort(dists, kind="stable"):
                if dists[j] > best_d:
                    break
                if int(j) not in claimed and _compatible_class(state, int(j), obs, params):
                    best = int(j)
                    break
        if best is not None:
            claimed.add(best)
        pairings.append(best)
    return Association(tuple(pairings))


class _JointCompatibility:
    """Cached innovation / cross-covariance blocks for joint Mahalanobis tests."""

    def __init__(self, state: SlamState, observations: Sequence[ConeObservation], params: SlamParams) -> None:
        self.state, self.obs, self.params = state, observations, params
        self._pred: dict[int, tuple[FloatArray, FloatArray]] = {}
        self._blocks: dict[tuple[int, int, int, int], FloatArray] = {}

    def prediction(self, j: int) -> tuple[FloatArray, FloatArray]:
        if j not in self._pred:
            self._pred[j] = measurement_model(self.state, j)
        return self._pred[j]

    def innovation(self, i: int, j: int) -> FloatArray:
        return _innovation(_obs_vector(self.obs[i]), self.prediction(j)[0])

    def block(self, i: int, j: int, i2: int, j2: int) -> FloatArray:
        key = (i, j, i2, j2)
        if key not in self._blocks:
            h1, h2 = self.prediction(j)[1], self.prediction(j2)[1]
            idx1, idx2 = _state_indices(j), _state_indices(j2)
            s = h1 @ self.state.covariance[np.ix_(idx1, idx2)] @ h2.T
            if i == i2:
                s = s + self.params.measurement_noise(self.obs[i])
            self._blocks[key] = s
        return self._blocks[key]

    def distance(self, pairs: Sequence[tuple[int, int]]) -> float:
        if not pairs:
            return 0.0
        nu = np.concatenate([self.innovation(i, j) for i, j in pairs])
        s = np.block([[self.block(i, j, i2, j2) for i2, j2 in pairs] for i, j in pairs])
        try:
            return float(nu @ np.linalg.solve(s, nu))
        except np.linalg.LinAlgError:
            return math.inf


def individually_compatible(
    state: SlamState, observations: Sequence[ConeObservation], params: SlamParams | None = None
) -> list[list[tuple[float, int]]]:
    """Per observation, the (distance, landmark) pairs passing the single-pair chi-square gate, nearest first."""
    params = params or SlamParams()
    jc = _JointCompatibility(state, observations, params)
    gate = chi2_gate(2, params.jcbb_confidence)
    out = []
    for i, obs in enumerate(observations):
        cands = []
        for j in range(state.n_landmarks):
            if not _compatible_class(state, j, obs, params):
                continue
            d2 = jc.distance([(i, j)])
            if d2 <= gate:
                cands.append((d2, j))
        out.append(sorted(cands))
    return out


def associate_jcbb(
    state: SlamState, observations: Sequence[ConeObservation], params: SlamParams | None = None
) -> Association:
    """Most pairings that are jointly compatible; ties go to the smaller joint Mahalanobis distance.

    A branch is cut when it cannot reach the incumbent's pairing count, or when its
    distance already exceeds the chi-square gate of the largest association it could grow into.
    """
    params = params or SlamParams()
    m = len(observations)
    if m > MAX_JCBB_OBSERVATIONS:
        msg = f"{m} observations exceed the JCBB bound of {MAX_JCBB_OBSERVATIONS}"
        raise FrameTooLarge(msg)
    if m == 0:
        return Association((), 0.0)

    jc = _JointCompatibility(state, observations, params)
    candidates = individually_compatible(state, observations, params)
    conf = params.jcbb_confidence
    best: dict[str, object] = {"pairs": [], "d2": 0.0}

    def search(i: int, pairs: list[tuple[int, int]], used: set[int], d2: float) -> None:
        k, remaining = len(pairs), m - i
        best_pairs: list = best["pairs"]  # type: ignore[assignment]
        if k + remaining < len(best_pairs):
            return
        if k and d2 > chi2_gate(2 * (k + remaining), conf):
            return
        if i == m:
            if k and d2 > chi2_gate(2 * k, conf):
                return
            if k > len(best_pairs) or (k == len(best_pairs) and d2 < best["d2"]):  # type: ignore[operator]
                best["pairs"], best["d2"] = list(pairs), d2
            return
        for _, j in candidates[i]:
            if j in used:
                continue
            pairs.append((i, j))
            used.add(j)
            search(i + 1, pairs, used, jc.distance(pairs))
            used.discard(j)
            pairs.pop()
        search(i + 1, pairs, used, d2)

    search(0, [], set(), 0.0)
    pairing: list[int | None] = [None] * m
    for i, j in best["pairs"]:  # type: ignore[attr-defined]
        pairing[i] = j
    return Association(tuple(pairing), float(best["d2"]))  # type: ignore[arg-type]


# ----------------------------------------------------------------------------------------------------------------------
# Measurement update


def _add_landmark(
    mean: FloatArray, cov: FloatArray, obs: ConeObservation, params: SlamParams
) -> tuple[FloatArray, FloatArray]:
    x, y, th = mean[:POSE_DIM]
    r, b = obs.range, obs.bearing
    a = th + b
    lm = np.array([x + r * math.cos(a), y + r * math.sin(a)])
    gp = np.array([[1.0, 0.0, -r * math.sin(a)], [0.0, 1.0, r * math.cos(a)]])
    gz = np.array([[math.cos(a), -r * math.sin(a)], [math.sin(a), r * math.cos(a)]])
    n = mean.shape[0]
    meas = params.measurement_noise(obs)
    p_ll = gp @ cov[:POSE_DIM, :POSE_DIM] @ gp.T + params.new_landmark_inflation * gz @ meas @ gz.T
    p_lx = gp @ cov[:POSE_DIM, :]
    new_cov = np.zeros((n + 2, n + 2))
    new_cov[:n, :n] = cov
    new_cov[n:, :n] = p_lx
    new_cov[:n, n:] = p_lx.T
    new_cov[n:, n:] = p_ll
    return np.concatenate([mean, lm]), new_cov


def measurement_update(
    state: SlamState,
    observations: Sequence[ConeObservation],
    association: Association,
    params: SlamParams | None = None,
) -> SlamState:
    """Sequential EKF updates in observation order; unpaired observations become new landmarks."""
    params = params or SlamParams()
    if len(association.pairings) != len(observations):
        msg = "association does not match the observation list"
        raise SlamError(msg)
    mean, cov = state.mean.copy(), state.covariance.copy()
    meta = list(state.landmark_meta)
    for obs, j in zip(observations, association.pairings, strict=True):
        if j is None:
            mean, cov = _add_landmark(mean, cov, obs, params)
            meta.append(LandmarkMeta().observed(obs.cls))
            continue
        if not 0 <= j < len(meta):
            msg = f"landmark {j} does not exist"
            raise SlamError(msg)
        current = SlamState(mean, cov, tuple(meta))
        z_hat, h_sub = measurement_model(current, j)
        idx = _state_indices(j)
        ph = cov[:, idx] @ h_sub.T  # (n, 2) = P H^T
        s = h_sub @ cov[np.ix_(idx, idx)] @ h_sub.T + params.measurement_noise(obs)
        k_gain = np.linalg.solve(s.T, ph.T).T
        nu = _innovation(_obs_vector(obs), z_hat)
        mean = mean + k_gain @ nu
        mean[2] = normalize_angle(mean[2])
        # Joseph form expanded for a sparse H: P - K H P - P H^T K^T + K S K^T
        khp = k_gain @ ph.T
        cov = cov - khp - khp.T + k_gain @ s @ k_gain.T
        cov = 0.5 * (cov + cov.T)
        meta[j] = meta[j].observed(obs.cls)
    return SlamState(mean, cov, tuple(meta))


def parallel_correction(
    pose_at_snapshot: Pose2D, corrected_snapshot_pose: Pose2D, current_propagated_pose: Pose2D
) -> Pose2D:
    """Re-apply the motion accumulated since the snapshot on top of the corrected snapshot pose."""
    return corrected_snapshot_pose.compose(pose_at_snapshot.inverse().compose(current_propagated_pose))


def associate(
    method: AssociationMethod, state: SlamState, observations: Sequence[ConeObservation], params: SlamParams
) -> Association:
    if method == "jcbb":
        try:
            return associate_jcbb(state, observations, params)
        except FrameTooLarge as e:
            log.warning("%s; falling back to nearest neighbour", e)
    return associate_nn(state, observations, params)


def landmark_table(state: SlamState) -> list[dict[str, float | int | str]]:
    """Map export rows: position, class, 2x2 covariance and observation count."""
    rows: list[dict[str, float | int | str]] = []
    for j, meta in enumerate(state.landmark_meta):
        x, y = state.landmark(j)
        c = state.landmark_cov(j)
        rows.append(
            {
                "x": x,
                "y": y,
                "class": meta.cls.value,
                "cov_xx": float(c[0, 0]),
                "cov_xy": float(c[0, 1]),
                "cov_yy": float(c[1, 1]),
                "n_obs": meta.n_obs,
            }
        )
    return rows


# ----------------------------------------------------------------------------------------------------------------------
# Motion / measurement split


@dataclass(frozen=True, slots=True)
class UpdateTiming:
    t: Seconds
    n_landmarks: int
    n_observations: int
    seconds: float


@dataclass(slots=True)
class _InFlight:
    snapshot: SlamState
    motion: list[tuple[OdometrySample, float]]
    ready_at: Seconds
    future: Future[SlamState] | None = None
    result: SlamState | None = None


class ParallelEkfSlam:
    """Pose propagated at control rate; at most one measurement task in flight.

    `mode="single"` computes the correction at once but only applies it `delay` seconds
    later (deterministic). `mode="threaded"` runs it on a one-worker thread pool and
    applies it whenever it is done. Frames that arrive while a task is in flight are dropped.
    """

    def __init__(
        self,
        start: Pose2D,
        params: SlamParams | None = None,
        *,
        association: AssociationMethod = "jcbb",
        mode: Literal["single", "threaded"] = "single",
        delay: Seconds = 0.3,
    ) -> None:
        self.params = params or SlamParams()
        self.association = association
        self.mode = mode
        self.delay = delay
        self.state = SlamState.initial(start)
        self.dropped_frames = 0
        self.timings: list[UpdateTiming] = []
        self._in_flight: _InFlight | None = None
        self._pool = ThreadPoolExecutor(max_workers=1, thread_name_prefix="slam") if mode == "threaded" else None

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=True)

    def __enter__(self) -> ParallelEkfSlam:
        return self

    def __exit__(self, *_: object) -> None:
        self.close()

    @property
    def busy(self) -> bool:
        return self._in_flight is not None

    def predict(self, odom: OdometrySample, dt: Seconds) -> None:
        self.state = motion_update(self.state, odom, dt, self.params.process_noise(dt))
        if self._in_flight is not None:
            self._in_flight.motion.append((odom, dt))

    def _correct(self, snapshot: SlamState, observations: Sequence[ConeObservation], t: Seconds) -> SlamState:
        start = time.perf_counter()
        assoc = associate(self.association, snapshot, observations, self.params)
        corrected = measurement_update(snapshot, observations, assoc, self.params)
        self.timings.append(UpdateTiming(t, snapshot.n_landmarks, len(observations), time.perf_counter() - start))
        return corrected

    def submit(self, observations: Sequence[ConeObservation], t: Seconds) -> bool:
        """Start a measurement task on a snapshot of the current state; False if the frame was dropped."""
        if self._in_flight is not None:
            self.dropped_frames += 1
            log.debug("t=%.2f: measurement task busy, frame dropped", t)
            return False
        usable = [o for o in observations if o.range <= self.params.max_obs_range]
        snapshot = self.state
        task = _InFlight(snapshot, [], t + self.delay)
        if self._pool is not None:
            task.future = self._pool.submit(self._correct, snapshot, usable, t)
        else:
            task.result = self._correct(snapshot, usable, t)
        self._in_flight = task
        return True

    def poll(self, t: Seconds) -> bool:
        """Merge a finished correction into the propagated state; True when one was applied."""
        task = self._in_flight
        if task is None:
            return False
        if task.future is not None:
            if not task.future.done():
                return False
            task.result = task.future.result()
        elif t + 1e-9 < task.ready_at:
            return False
        assert task.result is not None
        self._in_flight = None
        self._merge(task.snapshot, task.result, task.motion)
        return True

    def flush(self) -> None:
        task = self._in_flight
        if task is None:
            return
        if task.future is not None:
            task.result = task.future.result()
        assert task.result is not None
        self._in_flight = None
        self._merge(task.snapshot, task.result, task.motion)

    def _merge(self, snapshot: SlamState, corrected: SlamState, motion: list[tuple[OdometrySample, float]]) -> None:
        current_pose = self.state.pose
        replayed = corrected
        for odom, dt in motion:
            replayed = motion_update(replayed, odom, dt, self.params.process_noise(dt))
        pose = parallel_correction(snapshot.pose, corrected.pose, current_pose)
        self.state = replayed.with_pose(pose)

from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from geometry import Pose2D
from observation import ConeObservation
from sensors import OdometrySample
from slam import (
    MIN_RANGE,
    POSE_DIM,
    Association,
    FrameTooLarge,
    LandmarkMeta,
    ParallelEkfSlam,
    SlamError,
    SlamParams,
    SlamState,
    associate,
    associate_jcbb,
    associate_nn,
    chi2_gate,
    individually_compatible,
    landmark_table,
    measurement_model,
    measurement_update,
    motion_update,
    parallel_correction,
)
from utils.types import ConeClass, SourceTier


def _obs(x, y, cls=ConeClass.BLUE, tier=SourceTier.LIDAR_FUSION):
    """Observation of a point given in the vehicle frame."""
    return ConeObservation(math.hypot(x, y), math.atan2(y, x), cls, tier, 1.0)


def _odom(v, w):
    return OdometrySample(0.0, v, w, noisy=False)


def _state(pose, landmarks, pose_var=(0.0, 0.0, 0.0), landmark_var=0.01):
    n = len(landmarks)
    mean = np.concatenate([pose.as_array(), np.asarray(landmarks, dtype=float).reshape(-1)])
    cov = np.diag([*pose_var, *([landmark_var] * 2 * n)]).astype(float)
    return SlamState(mean, cov, tuple(LandmarkMeta().observed(ConeClass.BLUE) for _ in range(n)))


def _assert_valid_covariance(state):
    cov = state.covariance
    np.testing.assert_allclose(cov, cov.T, atol=1e-9)
    assert np.linalg.eigvalsh(cov).min() >= -1e-9
    assert state.mean.shape[0] == POSE_DIM + 2 * state.n_landmarks


# -- state ---------------------------------------------------------------------------------------------------------


def test_state_shape_checked():
    with pytest.raises(SlamError):
        SlamState(np.zeros(5), np.eye(5))


def test_landmark_class_is_histogram_argmax():
    meta = LandmarkMeta().observed(ConeClass.YELLOW).observed(ConeClass.BLUE).observed(ConeClass.BLUE)
    assert meta.cls is ConeClass.BLUE
    assert meta.n_obs == 3
    assert meta.histogram == (2, 1, 0, 0)


def test_chi2_gate():
    assert chi2_gate(2, 0.95) == pytest.approx(5.991, abs=1e-3)
    assert chi2_gate(4, 0.95) > chi2_gate(2, 0.95)


# -- motion --------------------------------------------------------------------------------------------------------


def test_motion_stationary_adds_process_noise():
    state = _state(Pose2D(1.0, 2.0, 0.3), [(4.0, 1.0)], pose_var=(0.1, 0.1, 0.01))
    q = SlamParams().process_noise(0.5)
    moved = motion_update(state, _odom(0.0, 0.0), 0.5, q)
    np.testing.assert_allclose(moved.mean, state.mean, atol=1e-12)
    assert moved.pose_cov_trace() == pytest.approx(state.pose_cov_trace() + np.trace(q))


def test_motion_axis_aligned():
    moved = motion_update(SlamState.initial(Pose2D()), _odom(1.0, 0.0), 1.0)
    assert moved.mean[0] == 1.0
    assert moved.mean[1] == 0.0


def test_motion_heading_wraps():
    moved = motion_update(SlamState.initial(Pose2D(0.0, 0.0, 3.1)), _odom(0.0, 1.0), 0.1)
    assert moved.pose.heading == pytest.approx(3.2 - 2 * math.pi)


def test_motion_leaves_landmark_blocks(rng):
    state = SlamState.initial(Pose2D(), (0.1, 0.1, 0.01))
    state = measurement_update(state, [_obs(5.0, 1.0), _obs(8.0, -2.0)], Association((None, None)))
    landmarks, block = state.landmarks().copy(), state.covariance[POSE_DIM:, POSE_DIM:].copy()
    for _ in range(100):
        state = motion_update(state, _odom(rng.uniform(0, 10), rng.uniform(-1, 1)), rng.uniform(0.01, 0.1))
        _assert_valid_covariance(state)
    np.testing.assert_array_equal(state.landmarks(), landmarks)
    np.testing.assert_array_equal(state.covariance[POSE_DIM:, POSE_DIM:], block)


def test_motion_rejects_bad_dt():
    with pytest.raises(SlamError):
        motion_update(SlamState.initial(Pose2D()), _odom(1.0, 0.0), 0.0)


# -- measurement model ---------------------------------------------------------------------------------------------


def test_measurement_model_examples():
    z, _ = measurement_model(_state(Pose2D(), [(3.0, 4.0)]), 0)
    assert z[0] == pytest.approx(5.0)
    assert z[1] == pytest.approx(math.atan2(4.0, 3.0))
    z, _ = measurement_model(_state(Pose2D(1.0, 1.0, math.pi / 4), [(3.0, 3.0)]), 0)
    assert z[1] == pytest.approx(0.0, abs=1e-12)


def test_measurement_jacobian_matches_finite_differences(rng):
    eps = 1e-6
    for _ in range(100):
        pose = Pose2D(*rng.uniform(-5, 5, 2), rng.uniform(-math.pi, math.pi))
        lx, ly = pose.to_ground(*(rng.uniform(1.0, 15.0) * np.array([1.0, rng.uniform(-1.0, 1.0)])))
        state = _state(pose, [(lx, ly)])
        _, h = measurement_model(state, 0)
        numeric = np.zeros((2, 5))
        for k in range(5):
            plus, minus = state.mean.copy(), state.mean.copy()
            plus[k] += eps
            minus[k] -= eps
            zp, _ = measurement_model(SlamState(plus, state.covariance, state.landmark_meta), 0)
            zm, _ = measurement_model(SlamState(minus, state.covariance, state.landmark_meta), 0)
            numeric[:, k] = (zp - zm) / (2 * eps)
        np.testing.assert_allclose(h, numeric, atol=1e-6)


def test_measurement_model_landmark_on_the_vehicle():
    state = _state(Pose2D(2.0, -1.0, 0.3), [(2.0, -1.0)])
    z, h = measurement_model(state, 0)
    assert z[0] == MIN_RANGE
    assert np.isfinite(z).all()
    assert np.isfinite(h).all()
    updated = measurement_update(state, [_obs(0.5, 0.0)], Association((0,)))
    assert np.isfinite(updated.mean).all()
    _assert_valid_covariance(updated)


# -- nearest neighbour ---------------------------------------------------------------------------------------------


def test_nn_pairs_exact_projection():
    state = _state(Pose2D(), [(5.0, 0.0)])
    assert associate_nn(state, [_obs(5.0, 0.0)]).pairings == (0,)


def test_nn_outside_gate_is_new():
    state = _state(Pose2D(), [(5.0, 0.0), (0.0, 5.0)])
    assert associate_nn(state, [_obs(15.0, 0.0)]).pairings == (None,)


def test_nn_first_observation_claims():
    state = _state(Pose2D(), [(5.0, 0.0), (5.0, 1.2)])
    assoc = associate_nn(state, [_obs(5.0, 0.3), _obs(5.0, 0.2)])
    assert assoc.pairings == (0, 1)
    assoc = associate_nn(_state(Pose2D(), [(5.0, 0.0)]), [_obs(5.0, 0.3), _obs(5.0, 0.2)])
    assert assoc.pairings == (0, None)


def test_nn_class_gate():
    state = _state(Pose2D(), [(5.0, 0.0)])
    yellow = [_obs(5.0, 0.0, ConeClass.YELLOW)]
    assert associate_nn(state, yellow).pairings == (None,)
    assert associate_nn(state, [_obs(5.0, 0.0)]).pairings == (0,)
    assert associate_nn(state, yellow, SlamParams(class_gate=False)).pairings == (0,)


def test_association_rejects_double_match():
    with pytest.raises(SlamError):
        Association((0, 0))


# -- JCBB ----------------------------------------------------------------------------------------------------------


def _joint_d2(state, observations, pairs, params):
    """Joint Mahalanobis distance built from the full stacked Jacobian."""
    n = state.mean.shape[0]
    h = np.zeros((2 * len(pairs), n))
    nu = np.zeros(2 * len(pairs))
    r = np.zeros((2 * len(pairs), 2 * len(pairs)))
    for row, (i, j) in enumerate(pairs):
        z_hat, h_j = measurement_model(state, j)
        cols = [0, 1, 2, POSE_DIM + 2 * j, POSE_DIM + 2 * j + 1]
        h[2 * row : 2 * row + 2, cols] = h_j
        obs = observations[i]
        nu[2 * row] = obs.range - z_hat[0]
        nu[2 * row + 1] = math.remainder(obs.bearing - z_hat[1], 2 * math.pi)
        r[2 * row : 2 * row + 2, 2 * row : 2 * row + 2] = params.measurement_noise(obs)
    s = h @ state.covariance @ h.T + r
    return float(nu @ np.linalg.solve(s, nu))


def _brute_force(state, observations, params):
    """Largest jointly compatible set of individually compatible pairings, and its smallest distance."""
    cands = [[j for _, j in c] for c in individually_compatible(state, observations, params)]
    best_k, best_d2 = 0, 0.0
    for choice in itertools.product(*[[None, *c] for c in cands]):
        pairs = [(i, j) for i, j in enumerate(choice) if j is not None]
        if len({j for _, j in pairs}) != len(pairs) or len(pairs) < best_k:
            continue
        d2 = _joint_d2(state, observations, pairs, params) if pairs else 0.0
        if pairs and d2 > chi2_gate(2 * len(pairs), params.jcbb_confidence):
            continue
        if len(pairs) > best_k or d2 < best_d2:
            best_k, best_d2 = len(pairs), d2
    return best_k, best_d2


def _random_scene(rng):
    n_lm = int(rng.integers(1, 5))
    landmarks = np.column_stack([rng.uniform(3, 10, n_lm), rng.uniform(-3, 3, n_lm)])
    state = _state(Pose2D(), landmarks, pose_var=(0.05, 0.2, 0.005), landmark_var=0.02)
    shift = rng.normal(0.0, [0.2, 0.4])
    observations = []
    for lx, ly in landmarks:
        if rng.random() < 0.8:
            x, y = np.array([lx, ly]) + shift + rng.normal(0.0, 0.05, 2)
            observations.append(_obs(x, y))
    if rng.random() < 0.5:
        observations.append(_obs(rng.uniform(3, 10), rng.uniform(-3, 3)))
    order = rng.permutation(len(observations))
    return state, [observations[i] for i in order][:4]


def test_jcbb_matches_brute_force():
    rng = np.random.default_rng(2024)
    params = SlamParams()
    for _ in range(200):
        state, observations = _random_scene(rng)
        assoc = associate_jcbb(state, observations, params)
        best_k, best_d2 = _brute_force(state, observations, params)
        assert assoc.n_paired == best_k
        pairs = [(i, j) for i, j in enumerate(assoc.pairings) if j is not None]
        if pairs:
            d2 = _joint_d2(state, observations, pairs, params)
            assert d2 <= chi2_gate(2 * len(pairs), params.jcbb_confidence) + 1e-9
            assert assoc.joint_distance == pytest.approx(d2, rel=1e-6)
            assert assoc.joint_distance <= best_d2 + 1e-6


def test_jcbb_resolves_shared_pose_error():
    # both cones appear shifted 0.55 m left: greedy NN grabs the wrong landmark first
    state = _state(Pose2D(), [(5.0, 0.0), (5.0, 1.0)], pose_var=(0.01, 0.25, 1e-4))
    observations = [_obs(5.0, 0.55), _obs(5.0, 1.55)]
    assert associate_nn(state, observations).pairings == (1, None)
    assoc = associate_jcbb(state, observations)
    assert assoc.pairings == (0, 1)


def test_jcbb_empty_frame():
    assoc = associate_jcbb(_state(Pose2D(), [(5.0, 0.0)]), [])
    assert assoc.pairings == ()
    assert assoc.joint_distance == 0.0


def test_jcbb_frame_bound_and_fallback():
    state = _state(Pose2D(), [(5.0, 0.0)])
    observations = [_obs(5.0 + 0.01 * i, 0.0) for i in range(51)]
    with pytest.raises(FrameTooLarge):
        associate_jcbb(state, observations)
    assoc = associate("jcbb", state, observations, SlamParams())
    assert assoc.pairings[0] == 0
    assert assoc.n_paired == 1


# -- measurement update --------------------------------------------------------------------------------------------


def test_update_with_exact_measurement():
    state = _state(Pose2D(), [(3.0, 4.0)], pose_var=(0.1, 0.1, 0.01), landmark_var=0.2)
    updated = measurement_update(state, [_obs(3.0, 4.0)], Association((0,)))
    np.testing.assert_allclose(updated.mean, state.mean, atol=1e-12)
    assert np.trace(updated.covariance) < np.trace(state.covariance)
    assert updated.landmark_meta[0].n_obs == 2


def test_update_adds_landmark():
    state = SlamState.initial(Pose2D())
    updated = measurement_update(state, [_obs(5.0, 0.0, ConeClass.YELLOW)], Association((None,)))
    assert updated.n_landmarks == 1
    assert updated.landmark(0) == pytest.approx((5.0, 0.0))
    assert updated.landmark_meta[0].cls is ConeClass.YELLOW
    assert np.linalg.det(updated.landmark_cov(0)) > 0


def test_update_rejects_bad_association():
    state = _state(Pose2D(), [(5.0, 0.0)])
    with pytest.raises(SlamError):
        measurement_update(state, [_obs(5.0, 0.0)], Association(()))
    with pytest.raises(SlamError):
        measurement_update(state, [_obs(5.0, 0.0)], Association((3,)))


def test_covariance_stays_valid_under_fuzz(rng):
    truth = np.column_stack([rng.uniform(-20, 20, 12), rng.uniform(-20, 20, 12)])
    true_pose = Pose2D()
    state = SlamState.initial(true_pose, (0.01, 0.01, 0.001))
    params = SlamParams()
    n_landmarks = 0
    for _ in range(300):
        v, w, dt = rng.uniform(0, 5), rng.uniform(-0.5, 0.5), 0.05
        true_pose = Pose2D(
            true_pose.x + v * math.cos(true_pose.heading) * dt,
            true_pose.y + v * math.sin(true_pose.heading) * dt,
            true_pose.heading + w * dt,
        )
        state = motion_update(state, _odom(v + rng.normal(0, 0.05), w), dt, params.process_noise(dt))
        local = [true_pose.to_local(x, y) for x, y in truth]
        observations = [
            _obs(x + rng.normal(0, 0.05), y + rng.normal(0, 0.05)) for x, y in local if 1.0 < math.hypot(x, y) < 12.0
        ][:3]
        state = measurement_update(state, observations, associate_nn(state, observations, params), params)
        _assert_valid_covariance(state)
        assert state.n_landmarks >= n_landmarks
        n_landmarks = state.n_landmarks


def test_landmark_table_rows():
    state = measurement_update(SlamState.initial(Pose2D()), [_obs(5.0, 0.0)], Association((None,)))
    (row,) = landmark_table(state)
    assert set(row) == {"x", "y", "class", "cov_xx", "cov_xy", "cov_yy", "n_obs"}
    assert row["class"] == "blue"
    assert row["n_obs"] == 1


# -- parallel correction -------------------------------------------------------------------------------------------


def test_parallel_correction_no_motion():
    corrected = Pose2D(0.3, -0.2, 0.05)
    snap = Pose2D(1.0, 2.0, 0.4)
    out = parallel_correction(snap, corrected, snap)
    assert out.as_array() == pytest.approx(corrected.as_array())


def test_parallel_correction_zero_correction():
    snap, current = Pose2D(1.0, 2.0, 0.4), Pose2D(3.0, 2.5, 0.9)
    out = parallel_correction(snap, snap, current)
    assert out.as_array() == pytest.approx(current.as_array())


def test_parallel_correction_shift():
    out = parallel_correction(Pose2D(), Pose2D(0.0, 0.5, 0.0), Pose2D(1.0, 0.0, 0.0))
    assert out.as_array() == pytest.approx([1.0, 0.5, 0.0])


# -- motion / measurement split ------------------------------------------------------------------------------------


def test_single_mode_applies_after_delay():
    slam = ParallelEkfSlam(Pose2D(), association="nn", delay=0.3)
    assert slam.submit([_obs(5.0, 0.0)], 0.0)
    assert slam.busy
    assert not slam.submit([_obs(6.0, 0.0)], 0.1)
    assert slam.dropped_frames == 1
    for k in range(1, 3):
        slam.predict(_odom(1.0, 0.0), 0.1)
        assert not slam.poll(0.1 * k)
    slam.predict(_odom(1.0, 0.0), 0.1)
    assert slam.poll(0.3)
    assert not slam.busy
    assert slam.state.n_landmarks == 1
    assert slam.state.pose.x == pytest.approx(0.3)
    assert slam.state.landmark(0) == pytest.approx((5.0, 0.0))
    assert len(slam.timings) == 1


def test_far_observations_are_ignored():
    slam = ParallelEkfSlam(Pose2D(), delay=0.0)
    slam.submit([_obs(20.0, 0.0), _obs(4.0, 1.0)], 0.0)
    slam.flush()
    assert slam.state.n_landmarks == 1


def test_threaded_mode_matches_single():
    frames = [[_obs(5.0, 1.0), _obs(5.0, -1.0)], [_obs(4.5, 1.0), _obs(4.5, -1.0)]]
    states = []
    for mode in ("single", "threaded"):
        with ParallelEkfSlam(Pose2D(), mode=mode, delay=0.0) as slam:
            for frame in frames:
                slam.submit(frame, 0.0)
                slam.flush()
                slam.predict(_odom(5.0, 0.0), 0.1)
            states.append(slam.state)
    np.testing.assert_allclose(states[0].mean, states[1].mean)
    np.testing.assert_allclose(states[0].covariance, states[1].covariance)

from __future__ import annotations

import numpy as np
import pytest

from geometry import CameraIntrinsics
from sensors import CameraRig, LidarParams
from track import TrackSpec, generate_track
from utils.types import Mission


@pytest.fixture
def k_small() -> CameraIntrinsics:
    return CameraIntrinsics(100.0, 100.0, 320.0, 240.0, 640, 480)


@pytest.fixture
def rig() -> CameraRig:
    return CameraRig()


@pytest.fixture
def lidar() -> LidarParams:
    return LidarParams()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def trackdrive_track():
    return generate_track(TrackSpec(Mission.TRACKDRIVE, seed=42))


@pytest.fixture(scope="session")
def skidpad_track():
    return generate_track(TrackSpec(Mission.SKIDPAD))


@pytest.fixture(scope="session")
def acceleration_track():
    return generate_track(TrackSpec(Mission.ACCELERATION))

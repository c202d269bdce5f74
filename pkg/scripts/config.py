"""Run configuration: a TOML file mapped onto frozen dataclasses.

Every table corresponds to one dataclass; unknown keys are errors naming the dotted key::

    mission = "trackdrive"
    seed = 42
    controller = "pure_pursuit"     # or "stanley"
    association = "jcbb"            # or "nn"
    noise_off = false

    [rates]
    sim_hz = 100
    perception_hz = 10
    control_hz = 50

    [noise.lidar]
    range_sigma = 0.02

    [control.pid]
    kp = 1.0
"""

from __future__ import annotations

import tomllib
from collections.abc import Mapping
from dataclasses import dataclass, field, fields, is_dataclass, replace
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Any, Literal

from control import PidGains, SupervisorConfig
from lidar import LidarTierParams
from planning import SpeedProfile
from sensors import CameraRig, DetectorNoise, LidarNoise, LidarParams, OdomNoise
from slam import SlamParams
from utils.types import Mission
from vehicle import VehicleParams
from vision import StereoMode, StereoNoise, StereoPick, StereoRegion

if TYPE_CHECKING:
    from slam import AssociationMethod
    from utils.types import Meters, Seconds


class HarnessError(Exception):
    pass


class ConfigError(HarnessError, ValueError):
    def __init__(self, where: str, reason: str) -> None:
        super().__init__(f"{where}: {reason}" if where else reason)
        self.where = where
        self.reason = reason


@dataclass(frozen=True, slots=True)
class Rates:
    sim_hz: int = 100
    perception_hz: int = 10
    control_hz: int = 50
    camera_delay_ticks: int = 1  # camera fires this many sim ticks after the LiDAR
    sync_window_s: float = 0.02

    def __post_init__(self) -> None:
        for name in ("sim_hz", "perception_hz", "control_hz"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"rates.{name}", "must be positive")
        for name in ("perception_hz", "control_hz"):
            rate = getattr(self, name)
            if rate > self.sim_hz:
                raise ConfigError(f"rates.{name}", f"{rate} Hz exceeds the sim rate {self.sim_hz} Hz")
            if self.sim_hz % rate:
                raise ConfigError(f"rates.{name}", f"{rate} Hz does not divide the sim rate {self.sim_hz} Hz")
        if self.camera_delay_ticks < 0 or self.sync_window_s < 0:
            raise ConfigError("rates", "camera_delay_ticks and sync_window_s must be >= 0")

    @property
    def dt(self) -> Seconds:
        return 1.0 / self.sim_hz

    @property
    def perception_every(self) -> int:
        return self.sim_hz // self.perception_hz

    @property
    def control_every(self) -> int:
        return self.sim_hz // self.control_hz


@dataclass(frozen=True, slots=True)
class NoiseConfig:
    lidar: LidarNoise = field(default_factory=LidarNoise)
    detector: DetectorNoise = field(default_factory=DetectorNoise)
    odometry: OdomNoise = field(default_factory=OdomNoise)
    stereo: StereoNoise = field(default_factory=StereoNoise)

    @classmethod
    def off(cls) -> NoiseConfig:
        return cls(LidarNoise.off(), DetectorNoise.off(), OdomNoise.off(), StereoNoise.off())


@dataclass(frozen=True, slots=True)
class PerceptionSettings:
    lidar: LidarTierParams = field(default_factory=LidarTierParams)
    stereo_region: StereoRegion = StereoRegion.SLENDER
    stereo_pick: StereoPick = StereoPick.TOP1
    calibrate_mono: bool = True

    @property
    def stereo_mode(self) -> StereoMode:
        return StereoMode(self.stereo_region, self.stereo_pick)


@dataclass(frozen=True, slots=True)
class SlamSettings:
    params: SlamParams = field(default_factory=SlamParams)
    delay_ticks: int = 3  # perception ticks a measurement task takes in single mode


@dataclass(frozen=True, slots=True)
class PlanningConfig:
    max_edge: Meters = 7.0
    max_step: Meters = 6.0
    spacing: Meters = 0.5
    margin: Meters = 0.6
    replan_period_s: Seconds = 0.5
    min_landmark_obs: int = 2
    refine: bool = True
    first_circle: Literal["right", "left"] = "right"
    speed: SpeedProfile = field(default_factory=SpeedProfile)

    def __post_init__(self) -> None:
        if self.first_circle not in {"right", "left"}:
            raise ConfigError("planning.first_circle", f"expected 'right' or 'left', got {self.first_circle!r}")


@dataclass(frozen=True, slots=True)
class ControlConfig:
    k_lookahead: Seconds = 0.5
    l_min: Meters = 2.0
    stanley_k: float = 1.2
    v_soft: float = 0.5
    pid: PidGains = field(default_factory=PidGains)
    supervisor: SupervisorConfig = field(default_factory=SupervisorConfig)


@dataclass(frozen=True, slots=True)
class BenchConfig:
    n_cones: int = 500
    range_min: Meters = 2.0
    range_max: Meters = 25.0
    bearing_max_deg: float = 45.0
    workers: int = 1

    def __post_init__(self) -> None:
        if self.n_cones <= 0 or self.workers <= 0:
            raise ConfigError("bench", "n_cones and workers must be positive")
        if not 0 < self.range_min < self.range_max:
            raise ConfigError("bench.range_min", "need 0 < range_min < range_max")


@dataclass(frozen=True, slots=True)
class RunConfig:
    mission: Mission = Mission.TRACKDRIVE
    track: Path | None = None  # generated from mission + seed when absent
    seed: int = 0
    out_dir: Path = Path("out")
    association: AssociationMethod = "jcbb"
    controller: Literal["pure_pursuit", "stanley"] = "pure_pursuit"
    mode: Literal["single", "threaded"] = "single"
    time_cap_s: Seconds = 400.0
    noise_off: bool = False
    rates: Rates = field(default_factory=Rates)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    camera: CameraRig = field(default_factory=CameraRig)
    lidar: LidarParams = field(default_factory=LidarParams)
    perception: PerceptionSettings = field(default_factory=PerceptionSettings)
    slam: SlamSettings = field(default_factory=SlamSettings)
    planning: PlanningConfig = field(default_factory=PlanningConfig)
    control: ControlConfig = field(default_factory=ControlConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)

    def __post_init__(self) -> None:
        choices = {
            "association": {"nn", "jcbb"},
            "controller": {"pure_pursuit", "stanley"},
            "mode": {"single", "threaded"},
        }
        for key, allowed in choices.items():
            if getattr(self, key) not in allowed:
                raise ConfigError(key, f"expected one of {sorted(allowed)}, got {getattr(self, key)!r}")
        if self.time_cap_s <= 0:
            raise ConfigError("time_cap_s", "must be positive")

    @property
    def effective_noise(self) -> NoiseConfig:
        return NoiseConfig.off() if self.noise_off else self.noise

    def with_overrides(self, *, seed: int | None = None, out_dir: Path | None = None) -> RunConfig:
        changes: dict[str, Any] = {}
        if seed is not None:
            changes["seed"] = seed
        if out_dir is not None:
            changes["out_dir"] = out_dir
        return replace(self, **changes)


# ----------------------------------------------------------------------------------------------------------------------
# Loading


def _key_for(default: Mapping[Any, Any], key: str, where: str) -> Any:  # noqa: ANN401
    for k in default:
        if str(k) == key or (isinstance(k, Enum) and k.value == key):
            return k
    raise ConfigError(where, f"unknown key (expected one of {sorted(str(k) for k in default)})")


def _coerce(default: Any, value: Any, where: str) -> Any:  # noqa: ANN401, PLR0911
    if is_dataclass(default) and not isinstance(default, type):
        return _build(type(default), value, where, default)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(where, f"expected a boolean, got {type(value).__name__}")
        return value
    if isinstance(default, Enum):
        try:
            return type(default)(value)
        except ValueError as e:
            raise ConfigError(where, str(e)) from e
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(where, f"expected an integer, got {type(value).__name__}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(where, f"expected a number, got {type(value).__name__}")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, list) or (default and len(value) != len(default)):
            raise ConfigError(where, f"expected a list of {len(default)} values")
        return tuple(_coerce(d, v, f"{where}[{i}]") for i, (d, v) in enumerate(zip(default, value, strict=True)))
    if isinstance(default, Mapping):
        if not isinstance(value, Mapping):
            raise ConfigError(where, "expected a table")
        out = dict(default)
        for k, v in value.items():
            key = _key_for(default, k, f"{where}.{k}")
            out[key] = _coerce(default[key], v, f"{where}.{k}")
        return out
    if isinstance(default, Path) or (default is None and where.endswith("track")):
        if not isinstance(value, str):
            raise ConfigError(where, "expected a path string")
        return Path(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(where, f"expected a string, got {type(value).__name__}")
        return value
    raise ConfigError(where, "key cannot be set from a config file")


def _build[T](cls: type[T], table: Any, where: str, base: T | None = None) -> T:  # noqa: ANN401
    if not isinstance(table, Mapping):
        raise ConfigError(where, "expected a table")
    base = base if base is not None else cls()
    known = {f.name for f in fields(cls)}  # type: ignore[arg-type]
    changes: dict[str, Any] = {}
    for key, value in table.items():
        dotted = f"{where}.{key}" if where else key
        if key not in known:
            raise ConfigError(dotted, "unknown key")
        changes[key] = _coerce(getattr(base, key), value, dotted)
    try:
        return replace(base, **changes)  # type: ignore[type-var]
    except ConfigError:
        raise
    except (ValueError, TypeError) as e:
        raise ConfigError(where, str(e)) from e


def config_from_dict(data: Mapping[str, Any], base_dir: Path | None = None) -> RunConfig:
    cfg = _build(RunConfig, data, "")
    if cfg.track is not None and base_dir is not None and not cfg.track.is_absolute():
        cfg = replace(cfg, track=base_dir / cfg.track)
    return cfg


def load_config(path: Path) -> RunConfig:
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ConfigError(str(path), "file not found") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(str(path), str(e)) from e
    return config_from_dict(data, path.parent)

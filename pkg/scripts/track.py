"""Ground-truth tracks: generation per mission and the JSON track format.

JSON schema (all floats SI units)::

    {
      "mission": "autocross" | "trackdrive" | "skidpad" | "acceleration",
      "track_width_m": 3.0,
      "start_pose": {"x": 0.0, "y": 0.0, "heading": 0.0},
      "cones": [{"x": 1.0, "y": 1.5, "class": "blue", "fallen": false}, ...],
      "triggers": [{"id": "center", "x": 0.0, "y": 0.0, "radius": 1.5}, ...],   # optional
      "centerline": [[x, y], ...]                                               # optional
    }
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Final

import numpy as np

from geometry import Pose2D
from utils.types import ConeClass, Mission

if TYPE_CHECKING:
    from collections.abc import Iterator
    from pathlib import Path

    from numpy.typing import NDArray

    from utils.types import Meters


SKIDPAD_RADIUS: Final = 9.125
SKIDPAD_LANE: Final = 3.0
TRIGGER_RADIUS: Final = 1.5
MIN_CENTERLINE_RADIUS: Final = 8.0


class SimError(ValueError):
    pass


class InvalidSpec(SimError):
    pass


class TrackLoadError(SimError):
    def __init__(self, where: str, reason: str) -> None:
        super().__init__(f"{where}: {reason}")
        self.where = where
        self.reason = reason


@dataclass(frozen=True, slots=True)
class TrackCone:
    x: Meters
    y: Meters
    cls: ConeClass
    fallen: bool = False


@dataclass(frozen=True, slots=True)
class Trigger:
    id: str
    x: Meters
    y: Meters
    radius: Meters

    def contains(self, px: float, py: float) -> bool:
        return math.hypot(px - self.x, py - self.y) <= self.radius


@dataclass(frozen=True, slots=True)
class TrackDefinition:
    mission: Mission
    cones: tuple[TrackCone, ...]
    start_pose: Pose2D
    track_width: Meters
    triggers: tuple[Trigger, ...] = ()
    centerline: tuple[tuple[float, float], ...] = ()

    def cone_array(self) -> NDArray[np.float64]:
        return np.array([[c.x, c.y] for c in self.cones]).reshape(-1, 2)

    def trigger(self, trigger_id: str) -> Trigger:
        for t in self.triggers:
            if t.id == trigger_id:
                return t
        msg = f"track has no trigger {trigger_id!r}"
        raise KeyError(msg)


@dataclass(frozen=True, slots=True)
class TrackSpec:
    mission: Mission
    seed: int = 0
    track_width: Meters = 3.0
    cone_spacing: Meters = 4.0
    length: Meters = 75.0  # acceleration straight
    mean_radius: Meters = 30.0  # closed tracks
    fallen_fraction: float = 0.0
    extra: dict[str, float] = field(default_factory=dict)


def _validate(spec: TrackSpec) -> None:
    for name in ("track_width", "cone_spacing", "length", "mean_radius"):
        if getattr(spec, name) <= 0:
            msg = f"{name} must be positive, got {getattr(spec, name)}"
            raise InvalidSpec(msg)
    if spec.cone_spacing > 5.0:  # noqa: PLR2004
        msg = f"cone_spacing {spec.cone_spacing} exceeds 5 m"
        raise InvalidSpec(msg)
    if not 0.0 <= spec.fallen_fraction <= 1.0:
        msg = "fallen_fraction must be in [0, 1]"
        raise InvalidSpec(msg)


def _resample(line: NDArray, spacing: float, *, closed: bool) -> NDArray:
    pts = np.vstack([line, line[:1]]) if closed else line
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    n = max(int(round(s[-1] / spacing)), 2)
    targets = np.linspace(0.0, s[-1], n, endpoint=not closed)
    return np.column_stack([np.interp(targets, s, pts[:, 0]), np.interp(targets, s, pts[:, 1])])


def _left_normals(line: NDArray, *, closed: bool) -> NDArray:
    if closed:
        tangent = np.roll(line, -1, axis=0) - np.roll(line, 1, axis=0)
    else:
        tangent = np.gradient(line, axis=0)
    tangent /= np.linalg.norm(tangent, axis=1, keepdims=True)
    return np.column_stack([-tangent[:, 1], tangent[:, 0]])


def _min_turn_radius(line: NDArray) -> float:
    a, b, c = np.roll(line, 1, axis=0), line, np.roll(line, -1, axis=0)
    cross = np.abs((b[:, 0] - a[:, 0]) * (c[:, 1] - b[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - b[:, 0]))
    denom = np.linalg.norm(b - a, axis=1) * np.linalg.norm(c - b, axis=1) * np.linalg.norm(c - a, axis=1)
    kappa = 2 * cross / np.maximum(denom, 1e-12)
    return float(1.0 / max(kappa.max(), 1e-12))


def _boundary_cones(center: NDArray, spec: TrackSpec, rng: np.random.Generator, *, closed: bool) -> list[TrackCone]:
    rows = _resample(center, spec.cone_spacing, closed=closed)
    normals = _left_normals(rows, closed=closed)
    half = spec.track_width / 2
    cones: list[TrackCone] = []
    for i, (p, n) in enumerate(zip(rows, normals, strict=True)):
        left, right = p + half * n, p - half * n
        at_start = i == 0
        lcls = ConeClass.ORANGE_BIG if at_start else ConeClass.BLUE
        rcls = ConeClass.ORANGE_BIG if at_start else ConeClass.YELLOW
        for (x, y), cls in (((left[0], left[1]), lcls), ((right[0], right[1]), rcls)):
            fallen = not at_start and bool(rng.random() < spec.fallen_fraction)
            cones.append(TrackCone(float(x), float(y), cls, fallen))
    return cones


def _closed_track(spec: TrackSpec, rng: np.random.Generator) -> TrackDefinition:
    phi = np.linspace(0.0, 2 * np.pi, 2000, endpoint=False)
    amps = rng.uniform(0.0, 0.12, size=3) / np.array([2.0, 3.0, 4.0])
    phases = rng.uniform(0.0, 2 * np.pi, size=3)
    for _ in range(12):
        wobble = sum(a * np.cos(k * phi + ph) for a, k, ph in zip(amps, (2, 3, 4), phases, strict=True))
        r = spec.mean_radius * (1.0 + wobble)
        center = np.column_stack([r * np.cos(phi), r * np.sin(phi)])
        if _min_turn_radius(center) >= max(MIN_CENTERLINE_RADIUS, spec.track_width):
            break
        amps = amps / 2
    # start on the x axis heading +y (counter-clockwise), so the inner (left) side is blue
    center -= center[0]
    tangent = center[1] - center[0]
    start = Pose2D(0.0, 0.0, math.atan2(tangent[1], tangent[0]))
    cones = _boundary_cones(center, spec, rng, closed=True)
    line = _resample(center, 1.0, closed=True)
    return TrackDefinition(
        spec.mission, tuple(cones), start, spec.track_width, centerline=tuple(map(tuple, line.round(9).tolist()))
    )


def _acceleration_track(spec: TrackSpec) -> TrackDefinition:
    half = spec.track_width / 2
    n = int(math.floor(spec.length / spec.cone_spacing + 1e-9))
    xs = [i * spec.cone_spacing for i in range(n + 1)]
    if xs[-1] < spec.length - 1e-9:
        xs.append(spec.length)
    cones: list[TrackCone] = []
    for x in xs:
        gate = x in {0.0, spec.length}
        left, right = (ConeClass.ORANGE_BIG,) * 2 if gate else (ConeClass.BLUE, ConeClass.YELLOW)
        cones += [TrackCone(x, half, left), TrackCone(x, -half, right)]
    brake_end = spec.length + spec.extra.get("braking_zone", 25.0)
    x = spec.length + spec.cone_spacing
    while x <= brake_end + 1e-9:
        cones += [TrackCone(x, half, ConeClass.ORANGE_SMALL), TrackCone(x, -half, ConeClass.ORANGE_SMALL)]
        x += spec.cone_spacing
    centerline = ((0.0, 0.0), (float(brake_end), 0.0))
    return TrackDefinition(spec.mission, tuple(cones), Pose2D(), spec.track_width, centerline=centerline)


def _ring(cx: float, cy: float, radius: float, spacing: float) -> NDArray:
    n = max(int(math.ceil(2 * math.pi * radius / spacing)), 8)
    n += n % 2  # even count keeps the angle set closed under negation, so y -> -y maps one ring onto the other
    a = -np.pi / 2 + 2 * np.pi * np.arange(n) / n
    return np.column_stack([cx + radius * np.cos(a), cy + radius * np.sin(a)])


def _skidpad_track(spec: TrackSpec) -> TrackDefinition:
    r, half = SKIDPAD_RADIUS, SKIDPAD_LANE / 2
    inner, outer = r - half, r + half
    cones: list[TrackCone] = []
    for sign in (-1.0, 1.0):  # right circle (y < 0) then left circle (y > 0)
        cy = sign * r
        # clockwise on the right circle: inner boundary on the car's right (yellow); mirrored on the left
        inner_cls, outer_cls = (ConeClass.YELLOW, ConeClass.BLUE) if sign < 0 else (ConeClass.BLUE, ConeClass.YELLOW)
        ring = _ring(0.0, cy, inner, spec.cone_spacing)
        cones += [TrackCone(float(x), float(y), inner_cls) for x, y in ring if abs(x) > 1e-9 or abs(y) > half + 1e-9]
        for x, y in _ring(0.0, cy, outer, spec.cone_spacing):
            if math.hypot(x, y + sign * r) >= outer - 1e-9 and abs(x) > half + 1e-9:
                cones.append(TrackCone(float(x), float(y), outer_cls))
    # timing gate where the circles touch
    cones += [TrackCone(0.0, half, ConeClass.ORANGE_BIG), TrackCone(0.0, -half, ConeClass.ORANGE_BIG)]
    for x in np.arange(-15.0, -math.sqrt(outer**2 - inner**2), spec.cone_spacing):
        cones += [TrackCone(float(x), half, ConeClass.ORANGE_SMALL), TrackCone(float(x), -half, ConeClass.ORANGE_SMALL)]
    for x in np.arange(r, 25.0 + 1e-9, spec.cone_spacing):
        cones += [TrackCone(float(x), half, ConeClass.ORANGE_SMALL), TrackCone(float(x), -half, ConeClass.ORANGE_SMALL)]

    triggers = (
        Trigger("center", 0.0, 0.0, TRIGGER_RADIUS),
        Trigger("right_1", 0.0, -2 * r, TRIGGER_RADIUS),
        Trigger("right_2", -r, -r, TRIGGER_RADIUS),
        Trigger("left_1", 0.0, 2 * r, TRIGGER_RADIUS),
        Trigger("left_2", -r, r, TRIGGER_RADIUS),
    )
    return TrackDefinition(spec.mission, tuple(cones), Pose2D(-15.0, 0.0, 0.0), SKIDPAD_LANE, triggers)


def generate_track(spec: TrackSpec) -> TrackDefinition:
    """Deterministic track for `spec.mission`; the same spec and seed give an identical track."""
    _validate(spec)
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed & (2**64 - 1)))
    match spec.mission:
        case Mission.ACCELERATION:
            return _acceleration_track(spec)
        case Mission.SKIDPAD:
            return _skidpad_track(spec)
        case Mission.AUTOCROSS | Mission.TRACKDRIVE:
            return _closed_track(spec, rng)


# ----------------------------------------------------------------------------------------------------------------------
# JSON


def track_to_dict(track: TrackDefinition) -> dict[str, Any]:
    out: dict[str, Any] = {
        "mission": track.mission.value,
        "track_width_m": track.track_width,
        "start_pose": {"x": track.start_pose.x, "y": track.start_pose.y, "heading": track.start_pose.heading},
        "cones": [{"x": c.x, "y": c.y, "class": c.cls.value, "fallen": c.fallen} for c in track.cones],
    }
    if track.triggers:
        out["triggers"] = [{"id": t.id, "x": t.x, "y": t.y, "radius": t.radius} for t in track.triggers]
    if track.centerline:
        out["centerline"] = [list(p) for p in track.centerline]
    return out


def _field[T](obj: dict[str, Any], key: str, typ: type[T], where: str) -> T:
    if key not in obj:
        raise TrackLoadError(f"{where}.{key}", "missing field")
    value = obj[key]
    if typ is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, typ):
        raise TrackLoadError(f"{where}.{key}", f"expected {typ.__name__}, got {type(value).__name__}")
    return value


def _objects(
    obj: dict[str, Any], key: str, where: str, *, required: bool = False
) -> Iterator[tuple[str, dict[str, Any]]]:
    """`(path, entry)` for each entry of a list of objects; an absent optional list is empty."""
    for i, raw in enumerate(_field(obj, key, list, where) if required or key in obj else []):
        path = f"{where}.{key}[{i}]"
        if not isinstance(raw, dict):
            raise TrackLoadError(path, f"expected object, got {type(raw).__name__}")
        yield path, raw


def _point(raw: object, where: str) -> tuple[float, float]:
    if not (isinstance(raw, list) and len(raw) == 2 and all(_is_number(v) for v in raw)):  # noqa: PLR2004
        raise TrackLoadError(where, "expected [x, y]")
    return float(raw[0]), float(raw[1])


def _is_number(value: object) -> bool:
    return isinstance(value, int | float) and not isinstance(value, bool)


def track_from_dict(data: dict[str, Any]) -> TrackDefinition:
    try:
        mission = Mission(_field(data, "mission", str, "$"))
    except ValueError as e:
        raise TrackLoadError("$.mission", str(e)) from e
    width = _field(data, "track_width_m", float, "$")
    sp = _field(data, "start_pose", dict, "$")
    start = Pose2D(
        _field(sp, "x", float, "$.start_pose"),
        _field(sp, "y", float, "$.start_pose"),
        _field(sp, "heading", float, "$.start_pose"),
    )

    cones: list[TrackCone] = []
    for where, raw in _objects(data, "cones", "$", required=True):
        try:
            cls = ConeClass(_field(raw, "class", str, where))
        except ValueError as e:
            raise TrackLoadError(f"{where}.class", str(e)) from e
        fallen = _field(raw, "fallen", bool, where) if "fallen" in raw else False
        cones.append(TrackCone(_field(raw, "x", float, where), _field(raw, "y", float, where), cls, fallen))

    triggers = tuple(
        Trigger(
            _field(raw, "id", str, where),
            _field(raw, "x", float, where),
            _field(raw, "y", float, where),
            _field(raw, "radius", float, where),
        )
        for where, raw in _objects(data, "triggers", "$")
    )
    points = _field(data, "centerline", list, "$") if "centerline" in data else []
    centerline = tuple(_point(p, f"$.centerline[{i}]") for i, p in enumerate(points))
    return TrackDefinition(mission, tuple(cones), start, width, triggers, centerline)


def load_track(path: Path) -> TrackDefinition:
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise TrackLoadError(str(path), "file not found") from e
    except json.JSONDecodeError as e:
        raise TrackLoadError(f"{path}:{e.lineno}:{e.colno}", e.msg) from e
    if not isinstance(data, dict):
        raise TrackLoadError(str(path), "top level must be an object")
    return track_from_dict(data)


def save_track(track: TrackDefinition, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(track_to_dict(track), indent=2) + "\n", encoding="utf-8")
    return path

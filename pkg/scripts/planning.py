"""Path planning: Delaunay midline, minimum-curvature refinement and the acceleration straight.

The midline comes from the Delaunay triangulation of the mapped cones: midpoints of
blue-yellow edges, chained by nearest neighbour from the vehicle and smoothed with a
centripetal spline. On a complete map the midline is refined inside the corridor into
a minimum-curvature racing line.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Final

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.interpolate import splev, splprep
from scipy.optimize import minimize

from utils.types import ConeClass

if TYPE_CHECKING:
    from collections.abc import Sequence

    from geometry import FloatArray, Pose2D
    from utils.types import Meters


log = logging.getLogger(__name__)

MIN_SPACING: Final = 0.01
MIN_REFINE_POINTS: Final = 10
INCIRCLE_TOL: Final = 1e-9

type ConeXYC = tuple[float, float, ConeClass]
type Edge = tuple[int, int, bool]  # (i, j, boundary) with i < j


class PlanningError(ValueError):
    pass


class DegenerateInput(PlanningError):
    pass


class EmptyMidline(PlanningError):
    pass


class InfeasibleCorridor(PlanningError):
    pass


# ----------------------------------------------------------------------------------------------------------------------
# Paths


@dataclass(frozen=True, slots=True)
class SpeedProfile:
    v_max: float = 8.0
    a_lat_max: float = 4.0
    a_accel: float = 2.5
    a_brake: float = 4.0


def menger_curvature(points: FloatArray, *, closed: bool) -> FloatArray:
    """Signed three-point curvature (positive turning left); open-path endpoints copy their neighbour."""
    pts = np.asarray(points, dtype=float)
    n = pts.shape[0]
    if n < 3:  # noqa: PLR2004
        return np.zeros(n)
    a, b, c = np.roll(pts, 1, axis=0), pts, np.roll(pts, -1, axis=0)
    ab, bc, ca = b - a, c - b, a - c
    cross = ab[:, 0] * bc[:, 1] - ab[:, 1] * bc[:, 0]
    denom = np.linalg.norm(ab, axis=1) * np.linalg.norm(bc, axis=1) * np.linalg.norm(ca, axis=1)
    kappa = np.where(denom > 1e-15, 2.0 * cross / np.maximum(denom, 1e-15), 0.0)
    if not closed:
        kappa[0], kappa[-1] = kappa[1], kappa[-2]
    return kappa


def speed_targets(points: FloatArray, curvature: FloatArray, profile: SpeedProfile, *, closed: bool) -> FloatArray:
    """Friction-circle cap per point, then forward/backward passes with the longitudinal limits."""
    v = np.minimum(profile.v_max, np.sqrt(profile.a_lat_max / np.maximum(np.abs(curvature), 1e-6)))
    n = v.size
    if n < 2:  # noqa: PLR2004
        return v
    seg = np.linalg.norm(np.diff(np.vstack([points, points[:1]]) if closed else points, axis=0), axis=1)
    sweeps = 2 if closed else 1
    for _ in range(sweeps):
        for i in range(n - 1 if not closed else n):
            j = (i + 1) % n
            v[j] = min(v[j], math.sqrt(v[i] ** 2 + 2 * profile.a_accel * seg[i]))
        for i in range(n - 1, 0 if not closed else -1, -1):
            j = (i - 1) % n
            v[j] = min(v[j], math.sqrt(v[i] ** 2 + 2 * profile.a_brake * seg[j]))
    return v


@dataclass(frozen=True, slots=True, eq=False)
class WaypointPath:
    points: FloatArray  # (N, 2)
    curvature: FloatArray
    speed: FloatArray
    closed: bool = False

    def __post_init__(self) -> None:
        n = self.points.shape[0]
        if n == 0:
            msg = "a path needs at least one point"
            raise PlanningError(msg)
        if self.curvature.shape != (n,) or self.speed.shape != (n,):
            msg = f"curvature/speed arrays must have {n} entries"
            raise PlanningError(msg)
        if n > 1 and np.linalg.norm(np.diff(self.points, axis=0), axis=1).min() < MIN_SPACING:
            msg = f"consecutive path points closer than {MIN_SPACING} m"
            raise PlanningError(msg)

    @classmethod
    def from_points(
        cls, points: FloatArray, *, closed: bool = False, profile: SpeedProfile | None = None
    ) -> WaypointPath:
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        kappa = menger_curvature(pts, closed=closed)
        return cls(pts, kappa, speed_targets(pts, kappa, profile or SpeedProfile(), closed=closed), closed)

    def __len__(self) -> int:
        return self.points.shape[0]

    def arc_lengths(self) -> FloatArray:
        seg = np.linalg.norm(np.diff(self.points, axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(seg)])

    @property
    def length(self) -> Meters:
        s = float(self.arc_lengths()[-1])
        return s + (float(np.linalg.norm(self.points[0] - self.points[-1])) if self.closed else 0.0)

    def headings(self) -> FloatArray:
        if len(self) == 1:
            return np.zeros(1)
        if self.closed:
            d = np.roll(self.points, -1, axis=0) - self.points
        else:
            d = np.diff(self.points, axis=0)
            d = np.vstack([d, d[-1:]])
        return np.arctan2(d[:, 1], d[:, 0])

    def nearest_index(self, x: float, y: float) -> int:
        return int(np.argmin(np.hypot(self.points[:, 0] - x, self.points[:, 1] - y)))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "s_m": self.arc_lengths(),
                "x": self.points[:, 0],
                "y": self.points[:, 1],
                "curvature_1pm": self.curvature,
                "v_target_mps": self.speed,
            }
        )


def resample_polyline(points: FloatArray, spacing: Meters, *, closed: bool) -> FloatArray:
    pts = np.vstack([points, points[:1]]) if closed else np.asarray(points, dtype=float)
    s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
    n = max(round(s[-1] / spacing), 2) + (0 if closed else 1)
    targets = np.linspace(0.0, s[-1], n, endpoint=not closed)
    return np.column_stack([np.interp(targets, s, pts[:, 0]), np.interp(targets, s, pts[:, 1])])


# ----------------------------------------------------------------------------------------------------------------------
# Delaunay


@dataclass(frozen=True, slots=True, eq=False)
class Triangulation:
    vertices: FloatArray  # (N, 2), input order
    classes: tuple[ConeClass, ...]
    triangles: tuple[tuple[int, int, int], ...]  # counter-clockwise
    edges: tuple[Edge, ...]


def incircle(a: FloatArray, b: FloatArray, c: FloatArray, d: FloatArray) -> tuple[FloatArray, FloatArray]:
    """In-circle determinant of `d` against counter-clockwise (a, b, c), with its relative tolerance.

    Positive means `d` is strictly inside; works on stacked triangles (T, 2).
    """
    ad, bd, cd = np.atleast_2d(a) - d, np.atleast_2d(b) - d, np.atleast_2d(c) - d
    a2 = (ad * ad).sum(axis=1)
    b2 = (bd * bd).sum(axis=1)
    c2 = (cd * cd).sum(axis=1)
    det = (
        a2 * (bd[:, 0] * cd[:, 1] - cd[:, 0] * bd[:, 1])
        - b2 * (ad[:, 0] * cd[:, 1] - cd[:, 0] * ad[:, 1])
        + c2 * (ad[:, 0] * bd[:, 1] - bd[:, 0] * ad[:, 1])
    )
    scale = np.maximum(np.maximum(a2, b2), c2) ** 2
    return det, INCIRCLE_TOL * scale


def _orient(p: FloatArray, q: FloatArray, r: FloatArray) -> float:
    return float((q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]))


def delaunay_triangulate(cones: Sequence[ConeXYC]) -> Triangulation:
    """Incremental Bowyer-Watson with a super-triangle, inserting points in (x, y) order."""
    if len(cones) < 3:  # noqa: PLR2004
        msg = f"need >= 3 cones, got {len(cones)}"
        raise DegenerateInput(msg)
    xy = np.array([[c[0], c[1]] for c in cones], dtype=float)
    classes = tuple(c[2] for c in cones)
    if len({(float(x), float(y)) for x, y in xy}) != len(xy):
        msg = "duplicate cone positions"
        raise DegenerateInput(msg)
    centered = xy - xy.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[-1] <= 1e-9 * max(sv[0], 1e-12):
        msg = "all cones are collinear"
        raise DegenerateInput(msg)

    n = len(xy)
    lo, hi = xy.min(axis=0), xy.max(axis=0)
    mid, span = (lo + hi) / 2, float(max(hi - lo)) + 1.0
    pts = np.vstack(
        [
            xy,
            [mid[0] - 50 * span, mid[1] - 30 * span],
            [mid[0] + 50 * span, mid[1] - 30 * span],
            [mid[0], mid[1] + 50 * span],
        ]
    )
    tris: list[tuple[int, int, int]] = [(n, n + 1, n + 2)]

    for p in sorted(range(n), key=lambda i: (xy[i, 0], xy[i, 1])):
        arr = np.array(tris)
        det, tol = incircle(pts[arr[:, 0]], pts[arr[:, 1]], pts[arr[:, 2]], pts[p])
        bad = det > tol
        directed = set()
        for a, b, c in arr[bad]:
            directed |= {(int(a), int(b)), (int(b), int(c)), (int(c), int(a))}
        boundary = [(u, v) for u, v in directed if (v, u) not in directed]
        tris = [t for t, is_bad in zip(tris, bad, strict=True) if not is_bad]
        for u, v in sorted(boundary):
            if _orient(pts[u], pts[v], pts[p]) > 0:
                tris.append((u, v, p))
            else:
                tris.append((v, u, p))

    triangles = tuple(sorted(t for t in tris if max(t) < n))
    if not triangles:
        msg = "triangulation is empty"
        raise DegenerateInput(msg)
    counts: dict[tuple[int, int], int] = {}
    for a, b, c in triangles:
        for u, v in ((a, b), (b, c), (c, a)):
            key = (min(u, v), max(u, v))
            counts[key] = counts.get(key, 0) + 1
    edges = tuple((i, j, count == 1) for (i, j), count in sorted(counts.items()))
    return Triangulation(xy, classes, triangles, edges)


def delaunay_violations(tri: Triangulation) -> int:
    """Brute-force count of (triangle, vertex) pairs breaking the empty-circumcircle property."""
    v = tri.vertices
    violations = 0
    for a, b, c in tri.triangles:
        others = np.array([i for i in range(len(v)) if i not in {a, b, c}], dtype=int)
        if others.size == 0:
            continue
        for d in others:
            det, tol = incircle(v[a], v[b], v[c], v[d])
            violations += int(det[0] > tol[0])
    return violations


# ----------------------------------------------------------------------------------------------------------------------
# Midline


def _is_boundary_pair(c1: ConeClass, c2: ConeClass) -> bool:
    return {c1, c2} == {ConeClass.BLUE, ConeClass.YELLOW}


def raw_midpoints(tri: Triangulation, max_edge: Meters = 7.0) -> FloatArray:
    """Midpoints of blue-yellow edges no longer than `max_edge`, in edge order."""
    v = tri.vertices
    mids = [
        (v[i] + v[j]) / 2
        for i, j, _ in tri.edges
        if _is_boundary_pair(tri.classes[i], tri.classes[j]) and np.linalg.norm(v[i] - v[j]) <= max_edge
    ]
    return np.array(mids).reshape(-1, 2)


def _segments_cross(p1: FloatArray, p2: FloatArray, q1: FloatArray, q2: FloatArray) -> bool:
    d1, d2 = _orient(q1, q2, p1), _orient(q1, q2, p2)
    d3, d4 = _orient(p1, p2, q1), _orient(p1, p2, q2)
    return d1 * d2 < 0 and d3 * d4 < 0


def chain_midpoints(
    mids: FloatArray, start: Pose2D, *, max_step: Meters = 6.0, max_turn: float = math.pi / 2
) -> tuple[FloatArray, bool]:
    """Order midpoints by nearest-neighbour chaining from `start`.

    A step is allowed when it is within `max_step`, turns less than `max_turn` and does not
    cross an accepted segment. Returns the chain and whether it closes on itself.
    """
    if mids.shape[0] == 0:
        return mids, False
    local = np.array([start.to_local(x, y) for x, y in mids])
    ahead = np.flatnonzero(local[:, 0] >= 0.0)
    pool = ahead if ahead.size else np.arange(mids.shape[0])
    first = int(pool[np.argmin(np.hypot(local[pool, 0], local[pool, 1]))])

    order = [first]
    visited = np.zeros(mids.shape[0], dtype=bool)
    visited[first] = True
    direction = np.array([math.cos(start.heading), math.sin(start.heading)])
    while True:
        last = mids[order[-1]]
        dist = np.hypot(mids[:, 0] - last[0], mids[:, 1] - last[1])
        nxt = None
        for j in np.argsort(dist, kind="stable"):
            if visited[j]:
                continue
            if dist[j] > max_step:
                break
            step = (mids[j] - last) / max(dist[j], 1e-12)
            if float(step @ direction) < math.cos(max_turn):
                continue
            pairs = zip(order[:-2], order[1:-1], strict=True)
            if any(_segments_cross(last, mids[j], mids[a], mids[b]) for a, b in pairs):
                continue
            nxt = int(j)
            break
        if nxt is None:
            break
        direction = (mids[nxt] - last) / max(float(dist[nxt]), 1e-12)
        order.append(nxt)
        visited[nxt] = True

    chain = mids[order]
    total = float(np.linalg.norm(np.diff(chain, axis=0), axis=1).sum()) if len(order) > 1 else 0.0
    closing = float(np.linalg.norm(chain[-1] - chain[0]))
    closed = len(order) >= MIN_REFINE_POINTS and closing <= max_step and total > 3 * max_step
    return chain, closed


def _centripetal_params(points: FloatArray) -> FloatArray:
    step = np.sqrt(np.linalg.norm(np.diff(points, axis=0), axis=1))
    u = np.concatenate([[0.0], np.cumsum(step)])
    return u / u[-1]


def smooth_path(chain: FloatArray, *, closed: bool, spacing: Meters = 0.5, smoothing: Meters = 0.1) -> FloatArray:
    """Centripetal cubic spline through the chain, resampled at uniform arc length."""
    keep = np.concatenate([[True], np.linalg.norm(np.diff(chain, axis=0), axis=1) > MIN_SPACING])
    pts = chain[keep]
    if closed and np.linalg.norm(pts[-1] - pts[0]) <= MIN_SPACING:
        pts = pts[:-1]
    if pts.shape[0] < 4:  # noqa: PLR2004
        return resample_polyline(pts, spacing, closed=closed) if pts.shape[0] > 1 else pts
    data = np.vstack([pts, pts[:1]]) if closed else pts
    tck, _ = splprep(
        [data[:, 0], data[:, 1]], u=_centripetal_params(data), s=data.shape[0] * smoothing**2, per=int(closed), k=3
    )
    dense = np.column_stack(splev(np.linspace(0.0, 1.0, 20 * data.shape[0], endpoint=not closed), tck))
    return resample_polyline(dense, spacing, closed=closed)


def extract_midline(
    tri: Triangulation,
    start: Pose2D,
    *,
    max_edge: Meters = 7.0,
    max_step: Meters = 6.0,
    spacing: Meters = 0.5,
    profile: SpeedProfile | None = None,
) -> WaypointPath:
    mids = raw_midpoints(tri, max_edge)
    if mids.shape[0] == 0:
        msg = "no blue-yellow edges in the triangulation"
        raise EmptyMidline(msg)
    chain, closed = chain_midpoints(mids, start, max_step=max_step)
    if chain.shape[0] < 2:  # noqa: PLR2004
        msg = f"midline chain has {chain.shape[0]} point(s)"
        raise EmptyMidline(msg)
    log.debug("midline: %d/%d midpoints chained, closed=%s", chain.shape[0], mids.shape[0], closed)
    return WaypointPath.from_points(smooth_path(chain, closed=closed, spacing=spacing), closed=closed, profile=profile)


def pair_midpoints_naive(cones: Sequence[ConeXYC], max_dist: Meters = 7.0) -> FloatArray:
    """Baseline: each blue cone paired with its nearest yellow cone within `max_dist`."""
    blue = np.array([[x, y] for x, y, c in cones if c is ConeClass.BLUE]).reshape(-1, 2)
    yellow = np.array([[x, y] for x, y, c in cones if c is ConeClass.YELLOW]).reshape(-1, 2)
    if blue.size == 0 or yellow.size == 0:
        return np.empty((0, 2))
    mids = []
    for b in blue:
        d = np.hypot(yellow[:, 0] - b[0], yellow[:, 1] - b[1])
        j = int(np.argmin(d))
        if d[j] <= max_dist:
            mids.append((b + yellow[j]) / 2)
    return np.array(mids).reshape(-1, 2)


# ----------------------------------------------------------------------------------------------------------------------
# Minimum curvature


def _second_difference(n: int, *, closed: bool) -> sparse.csr_matrix:
    if closed:
        d = sparse.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(n, n), format="lil")
        d[0, n - 1] = 1.0
        d[n - 1, 0] = 1.0
        return d.tocsr()
    return sparse.diags([1.0, -2.0, 1.0], [0, 1, 2], shape=(n - 2, n), format="csr")


def curvature_energy(points: FloatArray, *, closed: bool) -> float:
    """Sum of squared second differences, the refinement objective."""
    d = _second_difference(points.shape[0], closed=closed)
    r = d @ points
    return float((r * r).sum())


def _normals(points: FloatArray, *, closed: bool) -> FloatArray:
    if closed:
        t = np.roll(points, -1, axis=0) - np.roll(points, 1, axis=0)
    else:
        t = np.gradient(points, axis=0)
    t = t / np.linalg.norm(t, axis=1, keepdims=True)
    return np.column_stack([-t[:, 1], t[:, 0]])


def min_curvature_refine(
    midline: WaypointPath,
    track_width: Meters,
    margin: Meters,
    *,
    max_iter: int = 500,
    tol: float = 1e-6,
    profile: SpeedProfile | None = None,
) -> WaypointPath:
    """Shift each waypoint along its normal within the corridor to minimise the curvature energy.

    Open paths keep both endpoints. The result is never worse than the input.
    """
    half = track_width / 2 - margin
    if half <= 0:
        msg = f"margin {margin} leaves no corridor in a {track_width} m track"
        raise InfeasibleCorridor(msg)
    n = len(midline)
    if n < MIN_REFINE_POINTS:
        msg = f"need >= {MIN_REFINE_POINTS} midline points, got {n}"
        raise DegenerateInput(msg)

    m, closed = midline.points, midline.closed
    normals = _normals(m, closed=closed)
    d = _second_difference(n, closed=closed)
    dm = d @ m

    def energy(alpha: FloatArray) -> tuple[float, FloatArray]:
        r = dm + d @ (normals * alpha[:, None])
        grad = 2.0 * ((d.T @ r) * normals).sum(axis=1)
        return float((r * r).sum()), grad

    bounds = [(-half, half)] * n
    if not closed:
        bounds[0] = bounds[-1] = (0.0, 0.0)
    f0, g0 = energy(np.zeros(n))
    free = np.ones(n, dtype=bool)
    if not closed:
        free[[0, -1]] = False
    if np.abs(g0[free]).max(initial=0.0) <= tol:
        return midline

    options = {"maxiter": max_iter, "gtol": tol}
    res = minimize(energy, np.zeros(n), jac=True, method="L-BFGS-B", bounds=bounds, options=options)
    if not res.fun < f0:
        log.debug("refinement did not lower the curvature energy (%.6g >= %.6g); keeping the midline", res.fun, f0)
        return midline
    alpha = np.clip(res.x, -half, half)
    log.debug("min-curvature: energy %.6g -> %.6g in %d iterations", f0, res.fun, res.nit)
    return WaypointPath.from_points(m + normals * alpha[:, None], closed=closed, profile=profile or SpeedProfile())


# ----------------------------------------------------------------------------------------------------------------------
# Acceleration


def _tls_line(points: FloatArray) -> tuple[FloatArray, FloatArray]:
    centroid = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - centroid)
    return centroid, vt[0]


def plan_acceleration(
    cones: Sequence[ConeXYC],
    *,
    spacing: Meters = 0.5,
    extend: Meters = 0.0,
    heading: float = 0.0,
    profile: SpeedProfile | None = None,
) -> WaypointPath:
    """Straight path along the bisector of the total-least-squares blue and yellow row lines.

    The axis is oriented along `heading`; the path covers the cones' span plus `extend`.
    """
    blue = np.array([[x, y] for x, y, c in cones if c is ConeClass.BLUE]).reshape(-1, 2)
    yellow = np.array([[x, y] for x, y, c in cones if c is ConeClass.YELLOW]).reshape(-1, 2)
    if blue.shape[0] < 2 or yellow.shape[0] < 2:  # noqa: PLR2004
        msg = f"each side needs >= 2 cones (blue {blue.shape[0]}, yellow {yellow.shape[0]})"
        raise DegenerateInput(msg)
    hint = np.array([math.cos(heading), math.sin(heading)])
    c_left, d_left = _tls_line(blue)
    c_right, d_right = _tls_line(yellow)
    d_left = d_left if d_left @ hint >= 0 else -d_left
    d_right = d_right if d_right @ hint >= 0 else -d_right
    axis = d_left + d_right
    axis /= np.linalg.norm(axis)
    origin = (c_left + c_right) / 2

    s = np.concatenate([blue, yellow]) @ axis - origin @ axis
    s0, s1 = float(s.min()), float(s.max()) + extend
    n = max(round((s1 - s0) / spacing), 1) + 1
    ts = np.linspace(s0, s1, n)
    return WaypointPath.from_points(origin + ts[:, None] * axis, closed=False, profile=profile or SpeedProfile())

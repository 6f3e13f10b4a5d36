"""Planar geometry for the planner.

Coordinates are NED metres: ``x`` points North, ``y`` points East. Polygon
boundaries count as inside, so anything touching an obstacle collides.
The scalar predicates wrap vectorised batch versions (``points_clear``,
``segments_clear``) that the graph builders call with thousands of
candidates at once.
"""
import math
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Iterable, List, NamedTuple, Sequence, Tuple, Union

import numpy as np

from core.errors import MalformedInputError, OutOfBoundsError, ParameterError

EPS = 1e-9


class Point2(NamedTuple):
    x: float
    y: float


def as_point(value) -> Point2:
    """Coerce a pair (tuple, array, Point2) to a finite Point2."""
    try:
        x, y = float(value[0]), float(value[1])
    except (TypeError, IndexError, ValueError) as e:
        raise MalformedInputError(f"Not a 2-D point: {value!r}") from e
    if not (math.isfinite(x) and math.isfinite(y)):
        raise MalformedInputError(f"Non-finite point: ({x}, {y})")
    return Point2(x, y)


def points_array(points: Iterable) -> np.ndarray:
    arr = np.asarray(list(points), dtype=float)
    if arr.size == 0:
        return np.zeros((0, 2))
    return arr.reshape(-1, 2)


# ---------------------------------------------------------------------------
# Vectorised primitives (broadcasting over numpy arrays)
# ---------------------------------------------------------------------------

def _orient(ax, ay, bx, by, cx, cy):
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def _point_segment_distance(px, py, ax, ay, bx, by):
    dx = bx - ax
    dy = by - ay
    len2 = dx * dx + dy * dy
    safe = np.where(len2 > 0.0, len2, 1.0)
    t = np.where(len2 > 0.0, ((px - ax) * dx + (py - ay) * dy) / safe, 0.0)
    # interior projections use |d x (p - a)| / |d|, exactly 0 on the segment
    interior = np.abs(_orient(ax, ay, bx, by, px, py)) / np.sqrt(safe)
    t = np.clip(t, 0.0, 1.0)
    end = np.hypot(px - (ax + t * dx), py - (ay + t * dy))
    return np.where((t > 0.0) & (t < 1.0), interior, end)


def _segment_segment_distance(ax, ay, bx, by, cx, cy, dx, dy):
    o1 = _orient(ax, ay, bx, by, cx, cy)
    o2 = _orient(ax, ay, bx, by, dx, dy)
    o3 = _orient(cx, cy, dx, dy, ax, ay)
    o4 = _orient(cx, cy, dx, dy, bx, by)
    proper = (((o1 > EPS) & (o2 < -EPS)) | ((o1 < -EPS) & (o2 > EPS))) & \
             (((o3 > EPS) & (o4 < -EPS)) | ((o3 < -EPS) & (o4 > EPS)))
    dist = np.minimum(
        np.minimum(_point_segment_distance(ax, ay, cx, cy, dx, dy),
                   _point_segment_distance(bx, by, cx, cy, dx, dy)),
        np.minimum(_point_segment_distance(cx, cy, ax, ay, bx, by),
                   _point_segment_distance(dx, dy, ax, ay, bx, by)),
    )
    return np.where(proper, 0.0, dist)


def _edges(verts: np.ndarray):
    nxt = np.roll(verts, -1, axis=0)
    return verts[:, 0], verts[:, 1], nxt[:, 0], nxt[:, 1]


def _points_in_polygon(px, py, verts: np.ndarray) -> np.ndarray:
    """Crossing-number test with boundary-inclusive semantics. px, py: (P,)."""
    x1, y1, x2, y2 = _edges(verts)
    px = px[:, None]
    py = py[:, None]
    on_edge = (_point_segment_distance(px, py, x1, y1, x2, y2) <= EPS).any(axis=1)
    straddle = (y1 > py) != (y2 > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
    crossings = np.count_nonzero(straddle & (px < xint), axis=1)
    return on_edge | (crossings % 2 == 1)


def _points_boundary_distance(px, py, verts: np.ndarray) -> np.ndarray:
    x1, y1, x2, y2 = _edges(verts)
    return _point_segment_distance(px[:, None], py[:, None], x1, y1, x2, y2).min(axis=1)


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Bounds:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        vals = (self.xmin, self.ymin, self.xmax, self.ymax)
        if not all(math.isfinite(v) for v in vals):
            raise MalformedInputError(f"Non-finite bounds: {vals}")
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise MalformedInputError(f"Bounds must satisfy min < max: {vals}")

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    def contains(self, p, tol: float = EPS) -> bool:
        return (self.xmin - tol <= p[0] <= self.xmax + tol
                and self.ymin - tol <= p[1] <= self.ymax + tol)

    def contains_array(self, pts: np.ndarray, tol: float = EPS) -> np.ndarray:
        return ((pts[:, 0] >= self.xmin - tol) & (pts[:, 0] <= self.xmax + tol)
                & (pts[:, 1] >= self.ymin - tol) & (pts[:, 1] <= self.ymax + tol))

    def corners(self) -> List[Point2]:
        return [Point2(self.xmin, self.ymin), Point2(self.xmax, self.ymin),
                Point2(self.xmax, self.ymax), Point2(self.xmin, self.ymax)]

    def as_polygon(self) -> "Polygon":
        return Polygon(self.corners())


@dataclass(frozen=True)
class Polygon:
    """Simple polygon, implicitly closed, stored counter-clockwise."""
    vertices: Tuple[Point2, ...]

    def __post_init__(self):
        verts = tuple(as_point(v) for v in self.vertices)
        if len(verts) < 3:
            raise MalformedInputError(f"Polygon needs at least 3 vertices, got {len(verts)}")
        arr = np.array(verts, dtype=float)
        nxt = np.roll(arr, -1, axis=0)
        edge_len = np.hypot(*(nxt - arr).T)
        if np.any(edge_len <= EPS):
            i = int(np.argmax(edge_len <= EPS))
            raise MalformedInputError(f"Polygon has a zero-length edge at vertex {i}")
        area2 = float(np.sum(arr[:, 0] * nxt[:, 1] - nxt[:, 0] * arr[:, 1]))
        if abs(area2) <= EPS:
            raise MalformedInputError("Polygon has zero area")
        if area2 < 0:
            verts = tuple(reversed(verts))
        object.__setattr__(self, "vertices", verts)
        self._check_simple()

    def _check_simple(self):
        arr = self.array
        n = len(arr)
        x1, y1, x2, y2 = _edges(arr)
        for i in range(n):
            # adjacent edges must not fold back onto each other
            j = (i + 1) % n
            ux, uy = x2[i] - x1[i], y2[i] - y1[i]
            vx, vy = x2[j] - x1[j], y2[j] - y1[j]
            if abs(ux * vy - uy * vx) <= EPS * math.hypot(ux, uy) * math.hypot(vx, vy) \
                    and ux * vx + uy * vy < 0:
                raise MalformedInputError(f"Polygon folds back on itself at vertex {j}")
            others = np.array([k for k in range(i + 2, n) if not (i == 0 and k == n - 1)], dtype=int)
            if others.size == 0:
                continue
            d = _segment_segment_distance(x1[i], y1[i], x2[i], y2[i],
                                          x1[others], y1[others], x2[others], y2[others])
            if np.any(d <= EPS):
                k = int(others[np.argmax(d <= EPS)])
                raise MalformedInputError(f"Polygon is self-intersecting: edges {i} and {k}")

    @cached_property
    def array(self) -> np.ndarray:
        arr = np.array(self.vertices, dtype=float)
        arr.setflags(write=False)
        return arr

    @cached_property
    def bbox(self) -> Tuple[float, float, float, float]:
        a = self.array
        return float(a[:, 0].min()), float(a[:, 1].min()), float(a[:, 0].max()), float(a[:, 1].max())

    @property
    def area(self) -> float:
        a = self.array
        nxt = np.roll(a, -1, axis=0)
        return 0.5 * float(np.sum(a[:, 0] * nxt[:, 1] - nxt[:, 0] * a[:, 1]))

    @property
    def perimeter(self) -> float:
        a = self.array
        return float(np.hypot(*(np.roll(a, -1, axis=0) - a).T).sum())

    @property
    def centroid(self) -> Point2:
        a = self.array
        nxt = np.roll(a, -1, axis=0)
        cross = a[:, 0] * nxt[:, 1] - nxt[:, 0] * a[:, 1]
        area6 = 3.0 * cross.sum()
        return Point2(float(((a[:, 0] + nxt[:, 0]) * cross).sum() / area6),
                      float(((a[:, 1] + nxt[:, 1]) * cross).sum() / area6))


@dataclass(frozen=True)
class PolygonMap:
    """Rectangular workspace with pairwise disjoint polygonal obstacles."""
    bounds: Bounds
    obstacles: Tuple[Polygon, ...] = ()
    safety_margin: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        if not math.isfinite(self.safety_margin) or self.safety_margin < 0:
            raise ParameterError(f"safety_margin must be >= 0, got {self.safety_margin}")
        for i, poly in enumerate(self.obstacles):
            inside = self.bounds.contains_array(poly.array)
            if not inside.all():
                v = int(np.argmin(inside))
                raise OutOfBoundsError(
                    f"Obstacle {i} vertex {v} {tuple(poly.array[v])} lies outside the map bounds")
        self._check_disjoint()

    def _check_disjoint(self):
        boxes = [p.bbox for p in self.obstacles]
        for i in range(len(self.obstacles)):
            for j in range(i + 1, len(self.obstacles)):
                bi, bj = boxes[i], boxes[j]
                if bi[2] < bj[0] - EPS or bj[2] < bi[0] - EPS or bi[3] < bj[1] - EPS or bj[3] < bi[1] - EPS:
                    continue
                a, b = self.obstacles[i].array, self.obstacles[j].array
                ax1, ay1, ax2, ay2 = _edges(a)
                bx1, by1, bx2, by2 = _edges(b)
                d = _segment_segment_distance(ax1[:, None], ay1[:, None], ax2[:, None], ay2[:, None],
                                              bx1, by1, bx2, by2)
                if np.any(d <= EPS) or _points_in_polygon(a[:1, 0], a[:1, 1], b)[0] \
                        or _points_in_polygon(b[:1, 0], b[:1, 1], a)[0]:
                    raise MalformedInputError(f"Obstacles {i} and {j} overlap")

    def with_margin(self, margin: float) -> "PolygonMap":
        return replace(self, safety_margin=float(margin))

    @cached_property
    def _boxes(self) -> np.ndarray:
        if not self.obstacles:
            return np.zeros((0, 4))
        return np.array([p.bbox for p in self.obstacles], dtype=float)


# ---------------------------------------------------------------------------
# Batch predicates
# ---------------------------------------------------------------------------

def obstacle_distance(points, map_: PolygonMap) -> np.ndarray:
    """Distance from each point to the nearest obstacle; 0 inside an obstacle."""
    pts = points_array(points)
    out = np.full(len(pts), np.inf)
    for poly in map_.obstacles:
        inside = _points_in_polygon(pts[:, 0], pts[:, 1], poly.array)
        d = _points_boundary_distance(pts[:, 0], pts[:, 1], poly.array)
        out = np.minimum(out, np.where(inside, 0.0, d))
    return out


def points_clear(points, map_: PolygonMap) -> np.ndarray:
    """True where a point is inside the bounds and keeps the safety margin."""
    pts = points_array(points)
    ok = map_.bounds.contains_array(pts)
    reach = max(map_.safety_margin, EPS)
    for poly, box in zip(map_.obstacles, map_._boxes):
        near = ok & (pts[:, 0] >= box[0] - reach) & (pts[:, 0] <= box[2] + reach) \
            & (pts[:, 1] >= box[1] - reach) & (pts[:, 1] <= box[3] + reach)
        idx = np.flatnonzero(near)
        if idx.size == 0:
            continue
        px, py = pts[idx, 0], pts[idx, 1]
        blocked = _points_in_polygon(px, py, poly.array) | \
            (_points_boundary_distance(px, py, poly.array) < reach)
        ok[idx[blocked]] = False
    return ok


def segments_clear(starts, ends, map_: PolygonMap) -> np.ndarray:
    """Vectorised segment test; bounds are not checked here."""
    a = points_array(starts)
    b = points_array(ends)
    ok = np.ones(len(a), dtype=bool)
    if len(a) == 0:
        return ok
    reach = max(map_.safety_margin, EPS)
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    for poly, box in zip(map_.obstacles, map_._boxes):
        near = ok & (hi[:, 0] >= box[0] - reach) & (lo[:, 0] <= box[2] + reach) \
            & (hi[:, 1] >= box[1] - reach) & (lo[:, 1] <= box[3] + reach)
        idx = np.flatnonzero(near)
        if idx.size == 0:
            continue
        verts = poly.array
        ex1, ey1, ex2, ey2 = _edges(verts)
        sa, sb = a[idx], b[idx]
        d = _segment_segment_distance(sa[:, 0:1], sa[:, 1:2], sb[:, 0:1], sb[:, 1:2],
                                      ex1, ey1, ex2, ey2).min(axis=1)
        blocked = (d < reach) | _points_in_polygon(sa[:, 0], sa[:, 1], verts)
        ok[idx[blocked]] = False
    return ok


# ---------------------------------------------------------------------------
# Scalar operations
# ---------------------------------------------------------------------------

def point_in_polygon(p, poly: Union[Polygon, Sequence]) -> bool:
    p = as_point(p)
    if not isinstance(poly, Polygon):
        poly = Polygon(tuple(poly))
    return bool(_points_in_polygon(np.array([p.x]), np.array([p.y]), poly.array)[0])


def distance_point_segment(p, a, b) -> float:
    p, a, b = as_point(p), as_point(a), as_point(b)
    return float(_point_segment_distance(p.x, p.y, a.x, a.y, b.x, b.y))


def segment_collision_free(a, b, map_: PolygonMap) -> bool:
    a, b = as_point(a), as_point(b)
    for name, p in (("start", a), ("end", b)):
        if not map_.bounds.contains(p):
            raise OutOfBoundsError(f"Segment {name} point {tuple(p)} lies outside the map bounds")
    return bool(segments_clear([a], [b], map_)[0])


def boundary_samples(poly: Union[Polygon, Bounds], spacing: float) -> List[Point2]:
    """Points along the perimeter, vertices included, gaps no longer than ``spacing``."""
    if not (math.isfinite(spacing) and spacing > 0):
        raise ParameterError(f"spacing must be > 0, got {spacing}")
    if isinstance(poly, Bounds):
        poly = poly.as_polygon()
    verts = poly.array
    nxt = np.roll(verts, -1, axis=0)
    out: List[Point2] = []
    for p, q in zip(verts, nxt):
        length = math.hypot(q[0] - p[0], q[1] - p[1])
        k = max(1, math.ceil(length / spacing - 1e-9))
        for j in range(k):
            t = j / k
            out.append(Point2(float(p[0] + t * (q[0] - p[0])), float(p[1] + t * (q[1] - p[1]))))
    return out


def path_length(points) -> float:
    pts = points_array(points)
    if len(pts) < 2:
        return 0.0
    return float(np.hypot(*np.diff(pts, axis=0).T).sum())

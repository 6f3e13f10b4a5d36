"""Step 2: turn the A* polyline into a timed, dynamically annotated warm start.

The improved chain is ``reduce_waypoints`` -> ``refine_corners`` ->
``smooth_with_arcs`` -> ``assign_time`` -> ``build_warm_start`` with the cost
integrated by ``propagate_cost_heun``. The original chain replaces the first
two calls with ``prune_collinear`` and integrates the cost with
``propagate_cost_rk4``.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from core.cost import CostWeights, cost_rate
from core.errors import DegenerateInputError, MalformedInputError, ParameterError
from core.geom import EPS, Point2, PolygonMap, as_point, points_clear, segments_clear
from core.roadmap import PiecewiseLinearPath
from core.vessel import VesselParams, coriolis_force, damping_force

logger = logging.getLogger(__name__)

MIN_SEGMENT = 1e-6
G1_TOL = 1e-6


def _wrap(a):
    return (np.asarray(a) + np.pi) % (2.0 * np.pi) - np.pi


def check_resolution(map_: PolygonMap) -> float:
    """Sampling step used when re-checking curved geometry."""
    return 0.1 * map_.safety_margin if map_.safety_margin > 0 else 0.5


# ---------------------------------------------------------------------------
# Polyline refinement
# ---------------------------------------------------------------------------

def _require_clear(path: PiecewiseLinearPath, map_: PolygonMap, what: str):
    if not path.is_collision_free(map_):
        raise MalformedInputError(f"{what}: input path is not collision-free")


def reduce_waypoints(path: PiecewiseLinearPath, map_: PolygonMap) -> PiecewiseLinearPath:
    """Greedy line of sight: from each anchor jump to the farthest visible waypoint."""
    _require_clear(path, map_, "reduce_waypoints")
    pts = path.array
    keep = [0]
    i = 0
    n = len(pts)
    while i < n - 1:
        ahead = pts[i + 1:]
        visible = segments_clear(np.repeat(pts[i:i + 1], len(ahead), axis=0), ahead, map_)
        # the next waypoint is always visible on a collision-free path
        j = i + 1 + int(np.flatnonzero(visible)[-1])
        keep.append(j)
        i = j
    out = PiecewiseLinearPath(tuple(Point2(*pts[k]) for k in keep))
    logger.debug("Waypoint reduction: %d -> %d waypoints", n, len(out))
    return out


def prune_collinear(path: PiecewiseLinearPath, tol: float = 1e-9) -> PiecewiseLinearPath:
    """Drop interior waypoints that lie on the straight line through their neighbours."""
    pts = path.array
    keep = [pts[0]]
    for k in range(1, len(pts) - 1):
        a, b, c = keep[-1], pts[k], pts[k + 1]
        u, v = b - a, c - b
        cross = u[0] * v[1] - u[1] * v[0]
        if abs(cross) <= tol * np.hypot(*u) * np.hypot(*v) and np.dot(u, v) > 0:
            continue
        keep.append(b)
    keep.append(pts[-1])
    return PiecewiseLinearPath(tuple(Point2(*p) for p in keep))


def _deviation(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> float:
    u, v = b - a, c - b
    return math.atan2(u[0] * v[1] - u[1] * v[0], float(np.dot(u, v)))


def refine_corners(path: PiecewiseLinearPath, map_: PolygonMap, samples_per_edge: int = 8,
                   tol: float = 0.1, max_iter: int = 50,
                   history: Optional[List[float]] = None) -> PiecewiseLinearPath:
    """Iterative corner cutting.

    Each corner is replaced by the widest collision-free chord between points
    at equal fractions k/samples_per_edge along its two edges; k equal to
    samples_per_edge removes the corner. Passes repeat until a full pass
    shortens the path by less than ``tol`` or ``max_iter`` passes ran.
    ``history`` receives the length after every pass when given.
    """
    if samples_per_edge < 2:
        raise ParameterError(f"samples_per_edge must be >= 2, got {samples_per_edge}")
    if tol < 0 or max_iter < 1:
        raise ParameterError("tol must be >= 0 and max_iter >= 1")
    _require_clear(path, map_, "refine_corners")
    fractions = np.arange(samples_per_edge, 0, -1) / samples_per_edge
    pts = [np.asarray(p, dtype=float) for p in path.array]
    length = path.length
    if history is not None:
        history.append(length)
    passes = 0
    for passes in range(1, max_iter + 1):
        i = 1
        while i < len(pts) - 1:
            prev, corner, nxt = pts[i - 1], pts[i], pts[i + 1]
            if abs(_deviation(prev, corner, nxt)) < 1e-9:
                i += 1
                continue
            a = corner + fractions[:, None] * (prev - corner)
            b = corner + fractions[:, None] * (nxt - corner)
            ok = segments_clear(a, b, map_) & (np.hypot(*(b - a).T) > MIN_SEGMENT)
            if not ok.any():
                i += 1
                continue
            k = int(np.argmax(ok))
            if k == 0:
                del pts[i]
                continue
            pts[i:i + 1] = [a[k], b[k]]
            i += 2
        new_length = float(sum(np.hypot(*(q - p)) for p, q in zip(pts[:-1], pts[1:])))
        if history is not None:
            history.append(new_length)
        decrease = length - new_length
        length = new_length
        if decrease < tol:
            break
    logger.debug("Corner cutting: %d pass(es), length %.3f -> %.3f m", passes, path.length, length)
    return PiecewiseLinearPath(tuple(Point2(*p) for p in pts))


# ---------------------------------------------------------------------------
# Geometric path with circular fillets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LineSegment:
    a: Point2
    b: Point2

    @property
    def length(self) -> float:
        return math.hypot(self.b.x - self.a.x, self.b.y - self.a.y)

    @property
    def start_heading(self) -> float:
        return math.atan2(self.b.y - self.a.y, self.b.x - self.a.x)

    end_heading = start_heading

    @property
    def start(self) -> Point2:
        return self.a

    @property
    def end(self) -> Point2:
        return self.b

    def at(self, s: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        f = np.asarray(s, dtype=float) / self.length
        pos = np.column_stack([self.a.x + f * (self.b.x - self.a.x), self.a.y + f * (self.b.y - self.a.y)])
        return pos, np.full(len(f), self.start_heading)


@dataclass(frozen=True)
class Arc:
    """Circle arc from ``start_angle`` to ``end_angle`` (polar angles about
    ``center``); ``direction`` is +1 counter-clockwise, -1 clockwise."""
    center: Point2
    radius: float
    start_angle: float
    end_angle: float
    direction: int

    @property
    def sweep(self) -> float:
        return abs(self.end_angle - self.start_angle)

    @property
    def length(self) -> float:
        return self.radius * self.sweep

    def _point(self, ang: float) -> Point2:
        return Point2(self.center.x + self.radius * math.cos(ang), self.center.y + self.radius * math.sin(ang))

    @property
    def start(self) -> Point2:
        return self._point(self.start_angle)

    @property
    def end(self) -> Point2:
        return self._point(self.end_angle)

    @property
    def start_heading(self) -> float:
        return self.start_angle + self.direction * math.pi / 2

    @property
    def end_heading(self) -> float:
        return self.end_angle + self.direction * math.pi / 2

    def at(self, s: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        ang = self.start_angle + self.direction * np.asarray(s, dtype=float) / self.radius
        pos = np.column_stack([self.center.x + self.radius * np.cos(ang), self.center.y + self.radius * np.sin(ang)])
        return pos, ang + self.direction * math.pi / 2


Element = Union[LineSegment, Arc]


@dataclass(frozen=True)
class GeometricPath:
    elements: Tuple[Element, ...]

    def __post_init__(self):
        elems = tuple(self.elements)
        if not elems:
            raise MalformedInputError("A geometric path needs at least one element")
        for k, e in enumerate(elems):
            if not (math.isfinite(e.length) and e.length > 0):
                raise MalformedInputError(f"Element {k} has non-positive length")
        for k in range(len(elems) - 1):
            p, q = elems[k].end, elems[k + 1].start
            if math.hypot(q.x - p.x, q.y - p.y) > G1_TOL:
                raise MalformedInputError(f"Elements {k} and {k + 1} are not joined")
            if abs(float(_wrap(elems[k + 1].start_heading - elems[k].end_heading))) > G1_TOL:
                raise MalformedInputError(f"Tangent jumps between elements {k} and {k + 1}")
        object.__setattr__(self, "elements", elems)

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum([e.length for e in self.elements])])

    @property
    def length(self) -> float:
        return float(self.offsets[-1])

    @property
    def arcs(self) -> List[Arc]:
        return [e for e in self.elements if isinstance(e, Arc)]

    def sample(self, s) -> Tuple[np.ndarray, np.ndarray]:
        """Positions (n,2) and headings (n,) at arc lengths ``s``."""
        s = np.clip(np.atleast_1d(np.asarray(s, dtype=float)), 0.0, self.length)
        idx = np.clip(np.searchsorted(self.offsets, s, side="right") - 1, 0, len(self.elements) - 1)
        pos = np.empty((len(s), 2))
        head = np.empty(len(s))
        for k in np.unique(idx):
            sel = idx == k
            e = self.elements[k]
            pos[sel], head[sel] = e.at(np.minimum(s[sel] - self.offsets[k], e.length))
        return pos, head

    def polyline(self, step: float) -> np.ndarray:
        """Dense polyline with every element boundary included."""
        pieces = []
        for k, e in enumerate(self.elements):
            n = 1 if isinstance(e, LineSegment) else max(1, math.ceil(e.length / step))
            pos, _ = e.at(np.linspace(0.0, e.length, n + 1))
            pieces.append(pos if k == 0 else pos[1:])
        return np.vstack(pieces)

    def is_collision_free(self, map_: PolygonMap, step: Optional[float] = None) -> bool:
        pts = self.polyline(step or check_resolution(map_))
        if not points_clear(pts, map_).all():
            return False
        return bool(segments_clear(pts[:-1], pts[1:], map_).all())


def _fillet(prev: np.ndarray, corner: np.ndarray, nxt: np.ndarray, radius: float):
    """Tangent points and arc of the fillet at ``corner``; None when straight."""
    d_in = (corner - prev) / np.hypot(*(corner - prev))
    d_out = (nxt - corner) / np.hypot(*(nxt - corner))
    theta = math.atan2(d_in[0] * d_out[1] - d_in[1] * d_out[0], float(np.dot(d_in, d_out)))
    if abs(theta) < 1e-9:
        return None
    if abs(theta) >= math.pi - 1e-9:
        raise DegenerateInputError(f"Path reverses direction at {tuple(corner)}; no fillet exists")
    tan_half = math.tan(abs(theta) / 2.0)
    r_max = min(np.hypot(*(corner - prev)), np.hypot(*(nxt - corner))) / 2.0 / tan_half
    r = min(radius, r_max)
    L = r * tan_half
    t1 = corner - d_in * L
    t2 = corner + d_out * L
    side = 1 if theta > 0 else -1
    center = t1 + side * np.array([-d_in[1], d_in[0]]) * r
    start = math.atan2(t1[1] - center[1], t1[0] - center[0])
    arc = Arc(Point2(*center), float(r), start, start + theta, side)
    return t1, t2, arc


def smooth_with_arcs(path: PiecewiseLinearPath, turn_radius: float,
                     map_: Optional[PolygonMap] = None) -> GeometricPath:
    """Replace each corner by a circular fillet tangent to both incident segments.

    The radius is ``min(turn_radius, r_max)`` where r_max keeps the tangent
    points within the half-segments. When ``map_`` is given, a fillet that
    leaves the free space is retried with half the radius.
    """
    if not (math.isfinite(turn_radius) and turn_radius > 0):
        raise ParameterError(f"turn_radius must be > 0, got {turn_radius}")
    pts = path.array
    seg = np.hypot(*np.diff(pts, axis=0).T)
    if np.any(seg < MIN_SEGMENT):
        k = int(np.argmax(seg < MIN_SEGMENT))
        raise DegenerateInputError(f"Waypoints {k} and {k + 1} are closer than {MIN_SEGMENT} m")
    step = check_resolution(map_) if map_ is not None else None

    elements: List[Element] = []
    cursor = pts[0]

    def add_line(p, q):
        if np.hypot(*(q - p)) > 1e-9:
            elements.append(LineSegment(Point2(*p), Point2(*q)))

    for i in range(1, len(pts) - 1):
        radius = turn_radius
        fil = _fillet(pts[i - 1], pts[i], pts[i + 1], radius)
        if fil is None:
            continue
        if map_ is not None:
            for _ in range(30):
                poly = GeometricPath((fil[2],)).polyline(step)
                if points_clear(poly, map_).all() and segments_clear(poly[:-1], poly[1:], map_).all():
                    break
                radius = fil[2].radius / 2.0
                fil = _fillet(pts[i - 1], pts[i], pts[i + 1], radius)
            else:
                logger.warning("Fillet at waypoint %d still leaves the free space at radius %.3g m",
                               i, fil[2].radius)
        t1, t2, arc = fil
        add_line(cursor, t1)
        elements.append(arc)
        # the arc end is computed from the angle; snap to the exact tangent point
        cursor = t2
    add_line(cursor, pts[-1])
    if not elements:
        raise DegenerateInputError("Path has zero length")
    return GeometricPath(tuple(elements))


# ---------------------------------------------------------------------------
# Timing and warm start
# ---------------------------------------------------------------------------

def uniform_time_grid(t_max: float, n_intervals: int) -> np.ndarray:
    return np.arange(n_intervals + 1) * (t_max / n_intervals)


@dataclass(frozen=True, eq=False)
class TimedPath:
    """Positions and path headings at uniform times."""
    t: np.ndarray
    positions: np.ndarray
    headings: np.ndarray
    speed: float
    # final time as requested; t[-1] may differ from it in the last bit
    horizon: float

    @property
    def dt(self) -> float:
        return self.horizon / (len(self.t) - 1)

    @property
    def t_max(self) -> float:
        return self.horizon


def assign_time(gp: GeometricPath, cruise_speed: Optional[float] = None, n_intervals: int = 100,
                t_max: Optional[float] = None) -> TimedPath:
    """Traverse ``gp`` at constant speed, sampled at N+1 uniform times.

    Without ``t_max`` the final time is length / cruise_speed; with it the
    speed is length / t_max.
    """
    if n_intervals < 1:
        raise ParameterError(f"n_intervals must be >= 1, got {n_intervals}")
    if t_max is None:
        if cruise_speed is None or not (math.isfinite(cruise_speed) and cruise_speed > 0):
            raise ParameterError(f"cruise_speed must be > 0, got {cruise_speed}")
        t_max = gp.length / cruise_speed
    elif not (math.isfinite(t_max) and t_max > 0):
        raise ParameterError(f"t_max must be > 0, got {t_max}")
    speed = gp.length / t_max
    t = uniform_time_grid(t_max, n_intervals)
    s = np.minimum(speed * t, gp.length)
    s[-1] = gp.length
    pos, head = gp.sample(s)
    return TimedPath(t, pos, head, speed, float(t_max))


@dataclass(frozen=True, eq=False)
class TimedTrajectory:
    t: np.ndarray
    eta: np.ndarray
    nu: np.ndarray
    ctrl: np.ndarray
    cum_cost: np.ndarray
    metadata: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).reshape(-1)
        n = len(t)
        if n < 2:
            raise MalformedInputError(f"A trajectory needs at least 2 samples, got {n}")
        if np.any(np.diff(t) <= 0):
            raise MalformedInputError("Sample times must be strictly increasing")
        arrays = {"eta": (n, 3), "nu": (n, 3), "ctrl": (n, 2), "cum_cost": (n,)}
        for key, shape in arrays.items():
            arr = np.asarray(getattr(self, key), dtype=float)
            if arr.shape != shape:
                raise MalformedInputError(f"{key} must have shape {shape}, got {arr.shape}")
            object.__setattr__(self, key, arr)
        object.__setattr__(self, "t", t)

    def __len__(self):
        return len(self.t)

    @property
    def states(self) -> np.ndarray:
        return np.hstack([self.eta, self.nu])

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def t_max(self) -> float:
        return float(self.t[-1])

    @property
    def final_cost(self) -> float:
        return float(self.cum_cost[-1])

    @property
    def max_heading_jump(self) -> float:
        return float(np.abs(np.diff(self.eta[:, 2])).max())

    def is_uniform(self, rtol: float = 1e-9) -> bool:
        d = np.diff(self.t)
        return bool(np.allclose(d, d[0], rtol=rtol, atol=rtol * abs(d[0])))

    def with_cost(self, cum_cost: np.ndarray) -> "TimedTrajectory":
        return replace(self, cum_cost=np.asarray(cum_cost, dtype=float))

    def with_metadata(self, **kw) -> "TimedTrajectory":
        return replace(self, metadata={**self.metadata, **kw})

    def is_collision_free(self, map_: PolygonMap) -> bool:
        xy = self.eta[:, :2]
        if not points_clear(xy, map_).all():
            return False
        return bool(segments_clear(xy[:-1], xy[1:], map_).all())


def _require_uniform(traj: TimedTrajectory):
    if not traj.is_uniform():
        raise ParameterError("Cost propagation needs a uniform time grid")


def propagate_cost_heun(traj: TimedTrajectory, weights: CostWeights) -> np.ndarray:
    """Running cost by improved Euler using only the existing samples."""
    _require_uniform(traj)
    F = cost_rate(traj.states, traj.ctrl, weights)
    inc = 0.5 * traj.dt * (F[:-1] + F[1:])
    return np.concatenate([[0.0], np.cumsum(inc)])


def propagate_cost_rk4(traj: TimedTrajectory, weights: CostWeights) -> np.ndarray:
    """Running cost by classical RK4; half-step integrands come from linear
    interpolation between samples."""
    _require_uniform(traj)
    x, u = traj.states, traj.ctrl
    F = cost_rate(x, u, weights)
    F_mid = cost_rate(0.5 * (x[:-1] + x[1:]), 0.5 * (u[:-1] + u[1:]), weights)
    inc = traj.dt / 6.0 * (F[:-1] + 4.0 * F_mid + F[1:])
    return np.concatenate([[0.0], np.cumsum(inc)])


def build_warm_start(samples: TimedPath, vessel: VesselParams, dt: Optional[float] = None,
                     weights: Optional[CostWeights] = None, cost_method: str = "heun") -> TimedTrajectory:
    """Annotate timed positions with velocities and inverse-dynamics controls.

    Sway is set to 0 and surge to the traversal speed. The sway row of the
    inverse dynamics is dropped since the vessel has no sway actuator. The
    last control repeats the previous one.
    """
    t = np.asarray(samples.t, dtype=float)
    n = len(t)
    if n < 2:
        raise MalformedInputError(f"Warm start needs at least 2 samples, got {n}")
    step = samples.dt
    if dt is not None and abs(dt - step) > 1e-9 * max(1.0, step):
        raise ParameterError(f"Samples are spaced {step} s, not dt={dt} s")
    psi = np.unwrap(samples.headings)
    nu = np.zeros((n, 3))
    nu[:, 0] = samples.speed
    nu[:, 2] = np.gradient(psi, step)
    nu_dot = np.gradient(nu, step, axis=0)

    tau = nu_dot @ vessel.M.T + coriolis_force(nu, vessel) + damping_force(nu, vessel)
    ctrl = tau[:, [0, 2]]
    ctrl[-1] = ctrl[-2]

    eta = np.column_stack([samples.positions, psi])
    traj = TimedTrajectory(t, eta, nu, ctrl, np.zeros(n), {"source": "warm-start"})
    weights = weights or CostWeights()
    propagate = propagate_cost_rk4 if cost_method == "rk4" else propagate_cost_heun
    return traj.with_cost(propagate(traj, weights))


def straight_line_guess(start, goal, vessel: VesselParams, n_intervals: int, t_max: float,
                        weights: Optional[CostWeights] = None) -> TimedTrajectory:
    """Constant-speed straight transit, used as a cold start."""
    a, b = as_point(start), as_point(goal)
    if math.hypot(b.x - a.x, b.y - a.y) <= EPS:
        raise DegenerateInputError("Start and goal coincide")
    gp = GeometricPath((LineSegment(a, b),))
    traj = build_warm_start(assign_time(gp, n_intervals=n_intervals, t_max=t_max), vessel, weights=weights)
    return traj.with_metadata(source="straight-line")

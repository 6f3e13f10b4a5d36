"""Step 3: the optimal control problem and its multiple-shooting transcription.

Decision vector layout, node by node::

    w = [x0 y0 psi0 u0 v0 r0 X0 N0 | x1 ... N1 | ... | xN yN psiN uN vN rN]

so ``dim(w) = 6 (N + 1) + 2 N``. Constraint rows are, in order: 6N
continuity defects, 6 start rows, 2 goal position rows, an optional goal
heading row, 3 optional goal velocity rows, then one obstacle row per
(node, circle) pair.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.linalg import svd

from core.cost import CostWeights, cost_rate, cost_rate_grad
from core.errors import ConstructionError, ParameterError
from core.geom import EPS, Bounds, Polygon, PolygonMap
from core.nlp import NlpProblem, NlpSolution
from core.refine import TimedTrajectory, propagate_cost_heun, uniform_time_grid
from core.vessel import State, VesselParams, rk4_array, rk4_with_sensitivity

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Obstacle covering
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CircleField:
    """Smooth obstacle constraint r^2 - |p - c|^2 <= 0."""
    cx: float
    cy: float
    radius: float
    obstacle: int = -1

    def value(self, p) -> float:
        dx, dy = p[0] - self.cx, p[1] - self.cy
        return self.radius * self.radius - (dx * dx + dy * dy)

    def contains(self, p, tol: float = 1e-9) -> bool:
        return self.value(p) >= -tol * max(1.0, self.radius ** 2)


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _is_convex(pts: np.ndarray) -> bool:
    n = len(pts)
    return all(_cross(pts[i - 1], pts[i], pts[(i + 1) % n]) >= -EPS for i in range(n))


def _triangulate(pts: np.ndarray) -> List[List[int]]:
    """Ear clipping of a counter-clockwise simple polygon."""
    idx = list(range(len(pts)))
    tris = []
    guard = 0
    while len(idx) > 3:
        guard += 1
        if guard > 10 * len(pts) ** 2:
            raise ConstructionError("Ear clipping did not terminate")
        n = len(idx)
        for k in range(n):
            i, j, l = idx[k - 1], idx[k], idx[(k + 1) % n]
            turn = _cross(pts[i], pts[j], pts[l])
            if turn <= EPS:
                if abs(turn) <= EPS:
                    # collinear vertex adds nothing
                    idx.pop(k)
                    break
                continue
            a, b, c = pts[i], pts[j], pts[l]
            blocked = False
            for m in idx:
                if m in (i, j, l):
                    continue
                p = pts[m]
                if _cross(a, b, p) >= -EPS and _cross(b, c, p) >= -EPS and _cross(c, a, p) >= -EPS:
                    blocked = True
                    break
            if blocked:
                continue
            tris.append([i, j, l])
            idx.pop(k)
            break
        else:
            raise ConstructionError("No ear found; polygon is not simple")
    tris.append(idx)
    return tris


def convex_pieces(poly: Polygon) -> List[np.ndarray]:
    """Convex decomposition: triangulate, then merge across diagonals while convex."""
    pts = poly.array
    if _is_convex(pts):
        return [pts.copy()]
    pieces = _triangulate(pts)
    merged = True
    while merged:
        merged = False
        for a in range(len(pieces)):
            for b in range(a + 1, len(pieces)):
                pa, pb = pieces[a], pieces[b]
                shared = None
                for k in range(len(pa)):
                    u, v = pa[k], pa[(k + 1) % len(pa)]
                    for m in range(len(pb)):
                        if pb[m] == v and pb[(m + 1) % len(pb)] == u:
                            shared = (k, m)
                            break
                    if shared:
                        break
                if shared is None:
                    continue
                k, m = shared
                # walk pa up to the shared edge, then around pb
                cand = pa[k + 1:] + pa[:k + 1]
                rest = [pb[(m + 2 + t) % len(pb)] for t in range(len(pb) - 2)]
                cand = cand + rest
                if _is_convex(pts[cand]):
                    pieces[a] = cand
                    del pieces[b]
                    merged = True
                    break
            if merged:
                break
    return [pts[p] for p in pieces]


def _circle_two(a, b):
    c = (a + b) / 2.0
    return c, float(np.hypot(*(a - c)))


def _circle_three(a, b, c):
    d = 2.0 * (a[0] * (b[1] - c[1]) + b[0] * (c[1] - a[1]) + c[0] * (a[1] - b[1]))
    if abs(d) < 1e-12:
        pairs = [(a, b), (a, c), (b, c)]
        return max((_circle_two(p, q) for p, q in pairs), key=lambda t: t[1])
    sa, sb, sc = a @ a, b @ b, c @ c
    ux = (sa * (b[1] - c[1]) + sb * (c[1] - a[1]) + sc * (a[1] - b[1])) / d
    uy = (sa * (c[0] - b[0]) + sb * (a[0] - c[0]) + sc * (b[0] - a[0])) / d
    center = np.array([ux, uy])
    return center, float(np.hypot(*(a - center)))


def smallest_enclosing_circle(points) -> Tuple[np.ndarray, float]:
    """Welzl's algorithm, iterative form, deterministic shuffle."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        raise ParameterError("No points to enclose")
    pts = pts[np.random.default_rng(0).permutation(len(pts))]
    tol = 1e-10 * max(1.0, float(np.abs(pts).max()))

    def inside(circ, p):
        return np.hypot(*(p - circ[0])) <= circ[1] + tol

    circ = (pts[0].copy(), 0.0)
    for i in range(1, len(pts)):
        if inside(circ, pts[i]):
            continue
        circ = (pts[i].copy(), 0.0)
        for j in range(i):
            if inside(circ, pts[j]):
                continue
            circ = _circle_two(pts[i], pts[j])
            for k in range(j):
                if not inside(circ, pts[k]):
                    circ = _circle_three(pts[i], pts[j], pts[k])
    center, radius = circ
    # guard against round-off leaving a vertex just outside
    radius = max(radius, float(np.hypot(*(pts - center).T).max()))
    return center, radius


def _clip_halfplane(pts: np.ndarray, normal: np.ndarray, offset: float) -> np.ndarray:
    """Keep the part of a convex polygon where normal . p <= offset."""
    out = []
    n = len(pts)
    for i in range(n):
        p, q = pts[i], pts[(i + 1) % n]
        dp, dq = normal @ p - offset, normal @ q - offset
        if dp <= 0:
            out.append(p)
        if dp * dq < 0:
            out.append(p + (q - p) * (dp / (dp - dq)))
    return np.array(out).reshape(-1, 2)


def _slabs(piece: np.ndarray, count: int) -> List[np.ndarray]:
    if count <= 1:
        return [piece]
    centered = piece - piece.mean(axis=0)
    axis = svd(centered, full_matrices=False)[2][0]
    proj = piece @ axis
    cuts = np.linspace(proj.min(), proj.max(), count + 1)
    out = []
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        slab = _clip_halfplane(_clip_halfplane(piece, axis, hi), -axis, -lo)
        if len(slab) >= 1:
            out.append(slab)
    return out


def obstacle_constraints(map_: PolygonMap, padding: float = 0.0, circles_per_piece: int = 1) -> List[CircleField]:
    """Cover every obstacle by circles whose union contains the padded polygon."""
    if padding < 0 or not math.isfinite(padding):
        raise ParameterError(f"padding must be >= 0, got {padding}")
    if circles_per_piece < 1:
        raise ParameterError(f"circles_per_piece must be >= 1, got {circles_per_piece}")
    fields: List[CircleField] = []
    for i, poly in enumerate(map_.obstacles):
        for piece in convex_pieces(poly):
            for slab in _slabs(piece, circles_per_piece):
                center, radius = smallest_enclosing_circle(slab)
                fields.append(CircleField(float(center[0]), float(center[1]), radius + padding, i))
    logger.debug("Covered %d obstacle(s) with %d circle(s)", len(map_.obstacles), len(fields))
    return fields


# ---------------------------------------------------------------------------
# Problem statement
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GoalTarget:
    position: np.ndarray
    heading: Optional[float] = None
    velocity: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(2))
        if self.velocity is not None:
            object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=float).reshape(3))


@dataclass(frozen=True, eq=False)
class OcpSpec:
    t_max: float
    n_intervals: int
    weights: CostWeights
    start: State
    goal: GoalTarget
    bounds: Bounds
    obstacles: Tuple[CircleField, ...] = ()
    n_substeps: int = 4

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        if self.n_intervals < 2:
            raise ParameterError(f"N must be >= 2, got {self.n_intervals}")
        if not (math.isfinite(self.t_max) and self.t_max > 0):
            raise ParameterError(f"t_max must be > 0, got {self.t_max}")
        if not (self.weights.k_e > 0 and self.weights.k_t > 0):
            raise ParameterError("Cost weights K_e and K_t must both be > 0")
        if self.n_substeps < 1:
            raise ParameterError("n_substeps must be >= 1")

    @property
    def dt(self) -> float:
        return self.t_max / self.n_intervals

    @property
    def n_variables(self) -> int:
        return 6 * (self.n_intervals + 1) + 2 * self.n_intervals


def state_index(n_intervals: int) -> np.ndarray:
    return 8 * np.arange(n_intervals + 1)[:, None] + np.arange(6)[None, :]


def control_index(n_intervals: int) -> np.ndarray:
    return 8 * np.arange(n_intervals)[:, None] + 6 + np.arange(2)[None, :]


def _wrap(a):
    return np.arctan2(np.sin(a), np.cos(a))


def _quadrature_weights(n_intervals: int, dt: float) -> np.ndarray:
    c = np.full(n_intervals + 1, dt)
    c[0] = c[-1] = 0.5 * dt
    return c


def transcribe(spec: OcpSpec, vessel: VesselParams) -> NlpProblem:
    N = spec.n_intervals
    dt = spec.dt
    S = state_index(N)
    U = control_index(N)
    n = spec.n_variables
    if S.max() >= n or U.max() >= n:
        raise ConstructionError("Decision vector layout does not fit the problem dimension")
    quad = _quadrature_weights(N, dt)
    start = spec.start.as_vector()
    goal = spec.goal
    K = len(spec.obstacles)
    centers = np.array([[c.cx, c.cy] for c in spec.obstacles]).reshape(-1, 2)
    radii2 = np.array([c.radius ** 2 for c in spec.obstacles])
    w = spec.weights

    def unpack(z):
        x = z[S]
        u = z[U]
        return x, u, np.vstack([u, u[-1:]])

    def objective(z):
        x, _, ue = unpack(np.asarray(z, dtype=float))
        return float(np.dot(quad, cost_rate(x, ue, w)))

    def gradient(z):
        x, _, ue = unpack(np.asarray(z, dtype=float))
        _, dx, du = cost_rate_grad(x, ue, w)
        grad = np.zeros(n)
        grad[S] = quad[:, None] * dx
        gu = quad[:-1, None] * du[:-1]
        gu[-1] += quad[-1] * du[-1]
        grad[U] = gu
        return grad

    # row blocks
    rows_cont = 6 * N
    r0 = rows_cont
    r_goal = r0 + 6
    r_head = r_goal + 2
    n_head = 1 if goal.heading is not None else 0
    r_vel = r_head + n_head
    n_vel = 3 if goal.velocity is not None else 0
    r_obs = r_vel + n_vel
    m = r_obs + (N + 1) * K

    g_lb = np.zeros(m)
    g_ub = np.zeros(m)
    g_lb[r_obs:] = -np.inf

    def constraints(z):
        z = np.asarray(z, dtype=float)
        x, u, _ = unpack(z)
        g = np.empty(m)
        g[:rows_cont] = (rk4_array(x[:-1], u, vessel, dt, spec.n_substeps) - x[1:]).ravel()
        d0 = x[0] - start
        d0[2] = _wrap(d0[2])
        g[r0:r0 + 6] = d0
        g[r_goal:r_goal + 2] = x[-1, :2] - goal.position
        if n_head:
            g[r_head] = _wrap(x[-1, 2] - goal.heading)
        if n_vel:
            g[r_vel:r_vel + 3] = x[-1, 3:6] - goal.velocity
        if K:
            diff = x[:, None, :2] - centers[None, :, :]
            g[r_obs:] = (1.0 - (diff ** 2).sum(axis=2) / radii2[None, :]).ravel()
        return g

    # sparsity pattern, in the order values are produced in ``jacobian``
    blk = np.arange(N)
    cont_rows = np.repeat(6 * blk[:, None] + np.arange(6)[None, :], 8, axis=1).reshape(N, 6, 8)
    cont_cols = np.broadcast_to(np.concatenate([S[:-1], U], axis=1)[:, None, :], (N, 6, 8))
    next_rows = 6 * blk[:, None] + np.arange(6)[None, :]
    next_cols = S[1:]
    rows = [cont_rows.ravel(), next_rows.ravel(), r0 + np.arange(6), r_goal + np.arange(2)]
    cols = [cont_cols.ravel(), next_cols.ravel(), S[0], S[-1, :2]]
    if n_head:
        rows.append(np.array([r_head]))
        cols.append(S[-1, 2:3])
    if n_vel:
        rows.append(r_vel + np.arange(3))
        cols.append(S[-1, 3:6])
    if K:
        obs_rows = r_obs + np.arange((N + 1) * K).reshape(N + 1, K)
        rows += [obs_rows.ravel(), obs_rows.ravel()]
        cols += [np.repeat(S[:, 0], K), np.repeat(S[:, 1], K)]
    pat_rows = np.concatenate(rows)
    pat_cols = np.concatenate(cols)
    fixed = np.ones(6 + 2 + n_head + n_vel)

    def jacobian(z):
        z = np.asarray(z, dtype=float)
        x, u, _ = unpack(z)
        _, Jx, Ju = rk4_with_sensitivity(x[:-1], u, vessel, dt, spec.n_substeps)
        vals = [np.concatenate([Jx, Ju], axis=2).ravel(), -np.ones(6 * N), fixed]
        if K:
            diff = x[:, None, :2] - centers[None, :, :]
            vals.append((-2.0 * diff[:, :, 0] / radii2[None, :]).ravel())
            vals.append((-2.0 * diff[:, :, 1] / radii2[None, :]).ravel())
        return sparse.csr_matrix((np.concatenate(vals), (pat_rows, pat_cols)), shape=(m, n))

    w_lb = np.full(n, -np.inf)
    w_ub = np.full(n, np.inf)
    b = spec.bounds
    w_lb[S[:, 0]], w_ub[S[:, 0]] = b.xmin, b.xmax
    w_lb[S[:, 1]], w_ub[S[:, 1]] = b.ymin, b.ymax
    for j in range(3):
        w_lb[S[:, 3 + j]], w_ub[S[:, 3 + j]] = vessel.nu_lb[j], vessel.nu_ub[j]
    for j in range(2):
        w_lb[U[:, j]], w_ub[U[:, j]] = vessel.ctrl_lb[j], vessel.ctrl_ub[j]

    def magnitude(lo, hi, fallback):
        vals = [abs(v) for v in (lo, hi) if math.isfinite(v)]
        return max(vals) if vals and max(vals) > 0 else fallback

    state_scale = np.array([
        max(b.width, b.height), max(b.width, b.height), math.pi,
        magnitude(vessel.nu_lb[0], vessel.nu_ub[0], 1.0),
        magnitude(vessel.nu_lb[1], vessel.nu_ub[1], 1.0),
        magnitude(vessel.nu_lb[2], vessel.nu_ub[2], 0.1),
    ])
    ctrl_scale = np.array([magnitude(vessel.ctrl_lb[0], vessel.ctrl_ub[0], 1000.0),
                           magnitude(vessel.ctrl_lb[1], vessel.ctrl_ub[1], 1000.0)])
    w_scale = np.empty(n)
    w_scale[S] = state_scale
    w_scale[U] = ctrl_scale
    g_scale = np.ones(m)
    g_scale[:rows_cont] = np.tile(state_scale, N)
    g_scale[r0:r0 + 6] = state_scale
    g_scale[r_goal:r_goal + 2] = state_scale[:2]
    if n_head:
        g_scale[r_head] = state_scale[2]
    if n_vel:
        g_scale[r_vel:r_vel + 3] = state_scale[3:]

    labels = {"continuity": slice(0, rows_cont), "start": slice(r0, r0 + 6),
              "goal_position": slice(r_goal, r_goal + 2), "goal_heading": slice(r_head, r_head + n_head),
              "goal_velocity": slice(r_vel, r_vel + n_vel), "obstacles": slice(r_obs, m)}
    logger.debug("Transcribed OCP: %d variables, %d constraint rows (%d obstacle)", n, m, m - r_obs)
    return NlpProblem(n, objective, gradient, constraints, jacobian, g_lb, g_ub, w_lb, w_ub,
                      w_scale, g_scale, 1.0, labels)


def pack_warm_start(traj: TimedTrajectory, spec: OcpSpec) -> np.ndarray:
    N = spec.n_intervals
    if len(traj) != N + 1:
        raise ConstructionError(f"Warm start has {len(traj)} samples, expected {N + 1}")
    w = np.zeros(spec.n_variables)
    w[state_index(N)] = traj.states
    w[control_index(N)] = traj.ctrl[:-1]
    return w


def extract_trajectory(sol: NlpSolution, spec: OcpSpec) -> TimedTrajectory:
    """Unpack a solution; the last control repeats the final interval's control."""
    N = spec.n_intervals
    w = np.asarray(sol.w_opt, dtype=float)
    if w.size != spec.n_variables:
        raise ConstructionError(f"Solution has {w.size} entries, expected {spec.n_variables}")
    x = w[state_index(N)]
    u = w[control_index(N)]
    ctrl = np.vstack([u, u[-1:]])
    traj = TimedTrajectory(uniform_time_grid(spec.t_max, N), x[:, :3], x[:, 3:], ctrl, np.zeros(N + 1),
                           {"source": "ocp", "status": sol.status.value, "iterations": sol.iterations,
                            "max_violation": sol.max_violation, "objective": sol.objective})
    return traj.with_cost(propagate_cost_heun(traj, spec.weights))

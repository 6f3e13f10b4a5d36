import itertools
import math

import numpy as np
import pytest

from core.cost import CostWeights
from core.errors import DegenerateInputError, MalformedInputError, ParameterError, PlannerError
from core.geom import Bounds, Point2, Polygon, PolygonMap, points_clear, segment_collision_free
from core.refine import (Arc, GeometricPath, LineSegment, TimedTrajectory, assign_time, build_warm_start,
                         propagate_cost_heun, propagate_cost_rk4, prune_collinear, reduce_waypoints,
                         refine_corners, smooth_with_arcs, straight_line_guess)
from core.roadmap import PiecewiseLinearPath, astar, attach_endpoints, build_uniform_grid
from core.vessel import VesselParams, state_derivative

CORNER = PiecewiseLinearPath(((0, 0), (10, 0), (10, 10)))


def _rect(x0, y0, x1, y1):
    return Polygon(((x0, y0), (x1, y0), (x1, y1), (x0, y1)))


@pytest.fixture
def open_map():
    return PolygonMap(Bounds(-5, -5, 15, 15))


@pytest.fixture
def vessel():
    return VesselParams.default()


def test_reduce_waypoints_skips_visible_points(open_map):
    path = PiecewiseLinearPath(((0, 0), (5, 0), (10, 0), (10, 10)))
    reduced = reduce_waypoints(path, open_map)
    assert reduced.waypoints == ((0, 0), (10, 10))


def test_reduce_waypoints_rejects_colliding_input():
    map_ = PolygonMap(Bounds(-5, -5, 15, 15), (_rect(4, -1, 6, 1),))
    with pytest.raises(MalformedInputError):
        reduce_waypoints(CORNER, map_)


def test_prune_collinear():
    path = PiecewiseLinearPath(((0, 0), (1, 0), (2, 0), (2, 1)))
    assert prune_collinear(path).waypoints == ((0, 0), (2, 0), (2, 1))
    back = PiecewiseLinearPath(((0, 0), (2, 0), (1, 0)))
    assert len(prune_collinear(back)) == 3


def test_refine_corners_removes_free_corner(open_map):
    refined = refine_corners(CORNER, open_map)
    assert refined.waypoints == ((0, 0), (10, 10))
    assert refined.length == pytest.approx(10 * math.sqrt(2))


def test_refine_corners_takes_widest_clear_chord():
    map_ = PolygonMap(Bounds(-5, -5, 15, 15), (_rect(2.5, 2, 4, 3.5),))
    history = []
    refined = refine_corners(CORNER, map_, samples_per_edge=8, max_iter=1, history=history)
    assert refined.array == pytest.approx(np.array([[0, 0], [2.5, 0], [10, 7.5], [10, 10]]))
    assert history[0] == pytest.approx(20.0)
    assert history[1] == pytest.approx(2.5 + 7.5 * math.sqrt(2) + 2.5)
    assert refined.is_collision_free(map_)


def test_refine_corners_keeps_blocked_corner():
    map_ = PolygonMap(Bounds(-5, -5, 15, 15), (_rect(4, 0.05, 9.95, 5.95),))
    reduced = reduce_waypoints(CORNER, map_)
    assert len(reduced) == 3
    refined = refine_corners(reduced, map_)
    assert refined.is_collision_free(map_)
    assert refined.length <= reduced.length
    assert refined.length >= 14.4


def test_refine_corners_length_never_grows():
    map_ = PolygonMap(Bounds(0, 0, 100, 100), (_rect(30, 20, 50, 60), _rect(60, 50, 80, 90)))
    path = PiecewiseLinearPath(((5, 5), (55, 5), (55, 45), (90, 45), (90, 95)))
    history = []
    refined = refine_corners(path, map_, tol=1e-6, max_iter=20, history=history)
    assert np.all(np.diff(history) <= 1e-9)
    assert refined.is_collision_free(map_)


def test_refine_corners_parameter_checks(open_map):
    with pytest.raises(ParameterError):
        refine_corners(CORNER, open_map, samples_per_edge=1)
    with pytest.raises(ParameterError):
        refine_corners(CORNER, open_map, max_iter=0)


def test_smooth_with_arcs_right_angle():
    gp = smooth_with_arcs(CORNER, 2.0)
    assert len(gp.arcs) == 1
    arc = gp.arcs[0]
    assert arc.radius == pytest.approx(2.0)
    assert tuple(arc.center) == pytest.approx((8.0, 2.0))
    assert gp.length == pytest.approx(16.0 + math.pi)
    pos, head = gp.sample([0.0, gp.length])
    assert pos[-1] == pytest.approx([10.0, 10.0])
    assert head == pytest.approx([0.0, math.pi / 2])


def test_smooth_with_arcs_caps_radius_at_half_segment():
    gp = smooth_with_arcs(CORNER, 100.0)
    assert gp.arcs[0].radius == pytest.approx(5.0)


def test_smooth_with_arcs_reversal_and_radius_checks():
    with pytest.raises(DegenerateInputError):
        smooth_with_arcs(PiecewiseLinearPath(((0, 0), (10, 0), (0, 0))), 1.0)
    with pytest.raises(ParameterError):
        smooth_with_arcs(CORNER, 0.0)


def test_smooth_with_arcs_shrinks_fillet_near_obstacle():
    map_ = PolygonMap(Bounds(-5, -5, 15, 15), (_rect(8, 1, 8.6, 1.6),))
    gp = smooth_with_arcs(CORNER, 5.0, map_)
    assert gp.arcs[0].radius == pytest.approx(2.5)
    assert gp.is_collision_free(map_)


def test_geometric_path_rejects_gaps():
    with pytest.raises(MalformedInputError):
        GeometricPath((LineSegment(Point2(0, 0), Point2(1, 0)), LineSegment(Point2(2, 0), Point2(3, 0))))
    quarter = Arc(Point2(0, 1), 1.0, -math.pi / 2, 0.0, 1)
    with pytest.raises(MalformedInputError):
        # arc ends at heading pi/2, the segment leaves at 0
        GeometricPath((quarter, LineSegment(Point2(1, 1), Point2(2, 1))))


def test_assign_time_constant_speed():
    gp = GeometricPath((LineSegment(Point2(0, 0), Point2(100, 0)),))
    timed = assign_time(gp, cruise_speed=2.0, n_intervals=10)
    assert timed.t_max == pytest.approx(50.0)
    assert timed.dt == pytest.approx(5.0)
    assert timed.positions[:, 0] == pytest.approx(np.arange(11) * 10.0)
    faster = assign_time(gp, n_intervals=10, t_max=25.0)
    assert faster.speed == pytest.approx(4.0)
    with pytest.raises(ParameterError):
        assign_time(gp, cruise_speed=2.0, n_intervals=0)
    with pytest.raises(ParameterError):
        assign_time(gp)


def test_warm_start_straight_line_controls(vessel):
    gp = GeometricPath((LineSegment(Point2(0, 0), Point2(90, 0)),))
    warm = build_warm_start(assign_time(gp, cruise_speed=3.0, n_intervals=30), vessel)
    u = 3.0
    expected = vessel.D_lin[0, 0] * u + vessel.d_quad[0] * u * u
    assert warm.ctrl[:, 0] == pytest.approx(np.full(31, expected))
    assert warm.ctrl[:, 1] == pytest.approx(np.zeros(31), abs=1e-9)
    assert warm.nu[:, 1] == pytest.approx(np.zeros(31))
    assert warm.cum_cost[0] == 0.0
    assert np.all(np.diff(warm.cum_cost) >= 0)
    assert warm.metadata["source"] == "warm-start"


def test_warm_start_headings_are_continuous(vessel):
    path = PiecewiseLinearPath(((0, 0), (100, 0), (100, 100), (0, 100)))
    gp = smooth_with_arcs(path, 15.0)
    warm = build_warm_start(assign_time(gp, cruise_speed=3.0, n_intervals=200), vessel)
    assert warm.eta[-1, 2] == pytest.approx(math.pi, abs=1e-6)
    assert warm.max_heading_jump < 0.5


def test_warm_start_controls_reproduce_accelerations(vessel):
    path = PiecewiseLinearPath(((0, 0), (100, 0), (100, 100), (0, 100)))
    warm = build_warm_start(assign_time(smooth_with_arcs(path, 15.0), cruise_speed=3.0, n_intervals=200), vessel)
    nu_dot = np.gradient(warm.nu, warm.dt, axis=0)
    x = np.hstack([warm.eta, warm.nu])
    # surge and yaw rows only; the sway force is not actuated
    residual = (state_derivative(x, warm.ctrl, vessel)[:, 3:] - nu_dot) @ vessel.M.T
    assert residual[:-1][:, [0, 2]] == pytest.approx(np.zeros((200, 2)), abs=1e-6)


def test_warm_start_rejects_mismatched_dt(vessel):
    gp = GeometricPath((LineSegment(Point2(0, 0), Point2(90, 0)),))
    with pytest.raises(ParameterError):
        build_warm_start(assign_time(gp, cruise_speed=3.0, n_intervals=30), vessel, dt=0.5)


def _linear_rate_trajectory(t):
    """u = 1, X = t and r = 0, so |X u| integrates t."""
    n = len(t)
    nu = np.zeros((n, 3))
    nu[:, 0] = 1.0
    ctrl = np.column_stack([t, np.zeros(n)])
    return TimedTrajectory(t, np.zeros((n, 3)), nu, ctrl, np.zeros(n))


def test_cost_propagation_integrates_linear_rate():
    traj = _linear_rate_trajectory(np.linspace(0.0, 1.0, 11))
    weights = CostWeights(k_e=1.0, k_t=0.0, eps_e=0.0, eps_t=0.0)
    assert propagate_cost_heun(traj, weights)[-1] == pytest.approx(0.5, abs=1e-12)
    assert propagate_cost_rk4(traj, weights)[-1] == pytest.approx(0.5, abs=1e-12)


def test_cost_propagation_needs_uniform_grid():
    traj = _linear_rate_trajectory(np.array([0.0, 0.1, 0.3, 0.6]))
    with pytest.raises(ParameterError):
        propagate_cost_heun(traj, CostWeights())


def test_trajectory_validation():
    t = np.linspace(0, 1, 5)
    with pytest.raises(MalformedInputError):
        TimedTrajectory(t, np.zeros((4, 3)), np.zeros((5, 3)), np.zeros((5, 2)), np.zeros(5))
    with pytest.raises(MalformedInputError):
        TimedTrajectory(t[::-1], np.zeros((5, 3)), np.zeros((5, 3)), np.zeros((5, 2)), np.zeros(5))


def test_straight_line_guess(vessel):
    guess = straight_line_guess((0, 0), (30, 40), vessel, n_intervals=20, t_max=25.0)
    assert guess.metadata["source"] == "straight-line"
    assert guess.eta[-1, :2] == pytest.approx([30.0, 40.0])
    assert guess.nu[:, 0] == pytest.approx(np.full(21, 2.0))
    with pytest.raises(DegenerateInputError):
        straight_line_guess((1, 1), (1, 1), vessel, 20, 25.0)


def _fewest_waypoints(path: PiecewiseLinearPath, map_: PolygonMap) -> int:
    """Smallest subsequence keeping both ends whose legs are all collision-free."""
    pts = path.array
    inner = range(1, len(pts) - 1)
    for extra in range(len(pts) - 1):
        for chosen in itertools.combinations(inner, extra):
            idx = (0, *chosen, len(pts) - 1)
            if all(segment_collision_free(pts[i], pts[j], map_) for i, j in zip(idx[:-1], idx[1:])):
                return len(idx)
    return len(pts)


@pytest.mark.parametrize("island", [(2, 2, 9.5, 9.5), (3, 1, 9, 9), (1, 3, 9.5, 8), (6, 6, 9, 9)])
def test_reduce_waypoints_matches_fewest_waypoints(island):
    map_ = PolygonMap(Bounds(-1, -1, 11, 11), (_rect(*island),))
    legs = [(x, 0) for x in range(0, 10, 2)] + [(10, y) for y in range(0, 11, 2)]
    path = PiecewiseLinearPath(tuple(legs))
    reduced = reduce_waypoints(path, map_)
    assert len(reduced) == _fewest_waypoints(path, map_) == 3
    assert set(reduced.waypoints) <= set(path.waypoints)
    assert reduced.waypoints[0] == path.waypoints[0] and reduced.waypoints[-1] == path.waypoints[-1]
    assert reduced.is_collision_free(map_)
    assert reduced.length <= path.length


def test_reduce_waypoints_keeps_two_point_path(open_map):
    path = PiecewiseLinearPath(((0, 0), (3, 4)))
    assert reduce_waypoints(path, open_map).waypoints == path.waypoints


def _random_rect_map(rng):
    """Up to six disjoint rectangles, one per 50 m cell of a 200 m square."""
    cells = rng.choice(16, size=6, replace=False)
    islands = []
    for c in cells:
        x0, y0 = 50.0 * (c % 4), 50.0 * (c // 4)
        lo = rng.uniform(5.0, 15.0, 2)
        hi = rng.uniform(5.0, 15.0, 2)
        islands.append(_rect(x0 + lo[0], y0 + lo[1], x0 + 50.0 - hi[0], y0 + 50.0 - hi[1]))
    return PolygonMap(Bounds(0, 0, 200, 200), tuple(islands))


def _random_free_point(rng, map_):
    while True:
        p = rng.uniform(1.0, 199.0, 2)
        if points_clear(p[None, :], map_)[0]:
            return p


@pytest.mark.slow
def test_refinement_is_monotone_on_random_maps():
    rng = np.random.default_rng(11)
    planned = 0
    for _ in range(100):
        map_ = _random_rect_map(rng)
        start, goal = _random_free_point(rng, map_), _random_free_point(rng, map_)
        try:
            joined = attach_endpoints(build_uniform_grid(map_, 10.0), start, goal, map_)
            raw = astar(joined, *joined.endpoints).path
        except PlannerError:
            continue
        planned += 1
        reduced = reduce_waypoints(raw, map_)
        assert reduced.length <= raw.length + 1e-9
        assert reduced.is_collision_free(map_)
        history = []
        refined = refine_corners(reduced, map_, history=history)
        assert np.all(np.diff(history) <= 1e-9)
        assert refined.is_collision_free(map_)
        assert refined.waypoints[0] == raw.waypoints[0] and refined.waypoints[-1] == raw.waypoints[-1]
    assert planned >= 80


def test_smooth_with_arcs_switchback():
    # two near-reversals; tangent points must stay on the half-segments
    path = PiecewiseLinearPath(((0, 0), (10, 0), (0, 1), (10, 2)))
    gp = smooth_with_arcs(path, 5.0)
    assert len(gp.arcs) == 2
    pts = path.array
    for k, arc in enumerate(gp.arcs, start=1):
        prev, corner, nxt = pts[k - 1], pts[k], pts[k + 1]
        d_in, d_out = corner - prev, nxt - corner
        theta = abs(math.atan2(d_in[0] * d_out[1] - d_in[1] * d_out[0], float(np.dot(d_in, d_out))))
        r_max = min(np.hypot(*d_in), np.hypot(*d_out)) / 2.0 / math.tan(theta / 2.0)
        assert arc.radius == pytest.approx(r_max)
        for p in (arc.start, arc.end):
            assert math.hypot(p.x - corner[0], p.y - corner[1]) <= min(np.hypot(*d_in), np.hypot(*d_out)) / 2 + 1e-9
    # the fillets do not overlap on the shared middle segment
    first, second = gp.arcs
    mid_dir = (pts[2] - pts[1]) / np.hypot(*(pts[2] - pts[1]))
    s_first = np.dot(np.array(first.end) - pts[1], mid_dir)
    s_second = np.dot(np.array(second.start) - pts[1], mid_dir)
    assert s_first <= s_second + 1e-9
    assert gp.length <= path.length


def test_warm_start_yaw_rate_on_circular_arc(vessel):
    radius, speed = 50.0, 2.5
    half_circle = Arc(Point2(0.0, radius), radius, -math.pi / 2, math.pi / 2, 1)
    warm = build_warm_start(assign_time(GeometricPath((half_circle,)), cruise_speed=speed, n_intervals=100),
                            vessel)
    assert warm.nu[:, 2] == pytest.approx(np.full(101, speed / radius), rel=1e-6)
    assert warm.nu[:, 0] == pytest.approx(np.full(101, speed))
    assert warm.eta[-1, 2] - warm.eta[0, 2] == pytest.approx(math.pi)


def test_heun_cost_is_second_order():
    """|X u| = t^2 on [0, 1]; the trapezoid error is dt^2 / 6."""
    weights = CostWeights(k_e=1.0, k_t=0.0, eps_e=0.0, eps_t=0.0)
    errors = []
    for n in (10, 20, 40, 80):
        t = np.linspace(0.0, 1.0, n + 1)
        base = _linear_rate_trajectory(t)
        traj = TimedTrajectory(t, base.eta, base.nu, np.column_stack([t ** 2, np.zeros(n + 1)]), np.zeros(n + 1))
        err = propagate_cost_heun(traj, weights)[-1] - 1.0 / 3.0
        assert err == pytest.approx((1.0 / n) ** 2 / 6.0, rel=1e-9)
        errors.append(err)
    slope = np.polyfit(np.log([10, 20, 40, 80]), np.log(errors), 1)[0]
    assert slope == pytest.approx(-2.0, abs=0.05)


if __name__ == "__main__":
    pytest.main([__file__])

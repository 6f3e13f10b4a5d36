"""End-to-end planner: Step 1 (roadmap + A*), Step 2 (warm start), Step 3 (OCP).

Each step is timed with ``time.perf_counter`` around its module calls only.
"""
import logging
import time
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from config import Config, PlannerConfig
from core.cost import CostWeights
from core.errors import ParameterError, WarmStartInvalidError
from core.geom import PolygonMap
from core.nlp import NlpSolution, SolverOptions, solve_nlp
from core.ocp import CircleField, GoalTarget, OcpSpec, extract_trajectory, obstacle_constraints, \
    pack_warm_start, transcribe
from core.refine import GeometricPath, TimedTrajectory, assign_time, build_warm_start, prune_collinear, \
    reduce_waypoints, refine_corners, smooth_with_arcs, straight_line_guess
from core.report import RunReport
from core.roadmap import PiecewiseLinearPath, RoadmapGraph, SearchResult, astar, attach_endpoints, \
    build_uniform_grid, build_voronoi_roadmap
from core.vessel import State, VesselParams

logger = logging.getLogger(__name__)

STATUS_CONVERGED = "converged"
STATUS_BEST_EFFORT = "best-effort"
STATUS_NOT_OPTIMIZED = "not-optimized"


def parse_pose(value, what: str = "pose") -> Tuple[float, float, Optional[float]]:
    """``(x, y)`` or ``(x, y, psi)``; psi in radians."""
    if isinstance(value, str):
        value = [v for v in value.replace(" ", "").split(",") if v]
    elif isinstance(value, (tuple, list)) and len(value) == 3 and value[2] is None:
        value = value[:2]
    try:
        vals = [float(v) for v in value]
    except (TypeError, ValueError):
        raise ParameterError(f"{what} must be X,Y[,PSI] numbers, got {value!r}") from None
    if len(vals) not in (2, 3) or not np.isfinite(vals).all():
        raise ParameterError(f"{what} must be X,Y[,PSI] finite numbers, got {value!r}")
    return vals[0], vals[1], (vals[2] if len(vals) == 3 else None)


@dataclass
class RunArtifacts:
    """Intermediate products kept for rendering and inspection."""
    graph: Optional[RoadmapGraph] = None
    search: Optional[SearchResult] = None
    raw_path: Optional[PiecewiseLinearPath] = None
    refined_path: Optional[PiecewiseLinearPath] = None
    geometric_path: Optional[GeometricPath] = None
    warm_start: Optional[TimedTrajectory] = None
    circles: Tuple[CircleField, ...] = ()
    solution: Optional[NlpSolution] = None
    corner_history: List[float] = field(default_factory=list)


class _WarningCollector(logging.Handler):
    def __init__(self):
        super().__init__(logging.WARNING)
        self.messages: List[str] = []

    def emit(self, record):
        self.messages.append(record.getMessage())


class Planner:
    def __init__(self, cfg: Optional[PlannerConfig] = None, vessel: Optional[VesselParams] = None):
        self.cfg = (cfg or PlannerConfig()).validate()
        if vessel is None:
            vessel = VesselParams.from_file(self.cfg.vessel_file) if self.cfg.vessel_file else VesselParams.default()
        self.vessel = vessel
        self.steps = Config.apply_preset(self.cfg.preset)
        self.artifacts = RunArtifacts()
        self._horizon = 0.0

    @property
    def weights(self) -> CostWeights:
        c = self.cfg
        return CostWeights(c.k_e, c.k_t, c.eps_e, c.eps_t)

    def run(self, map_: PolygonMap, start, goal) -> Tuple[TimedTrajectory, RunReport]:
        cfg = self.cfg
        self.artifacts = RunArtifacts()
        if cfg.safety_margin > map_.safety_margin:
            map_ = map_.with_margin(cfg.safety_margin)
        sx, sy, s_psi = parse_pose(start, "start")
        gx, gy, g_psi = parse_pose(goal, "goal")
        report = RunReport(method=cfg.method, refinement=cfg.refinement, preset=cfg.preset,
                           n_intervals=cfg.n_intervals, delta_d=cfg.delta_d, seed=cfg.seed)

        collector = _WarningCollector()
        core_logger = logging.getLogger("core")
        core_logger.addHandler(collector)
        # warnings reach report.warnings whatever the console level
        core_level = core_logger.level
        if core_logger.getEffectiveLevel() > logging.WARNING:
            core_logger.setLevel(logging.WARNING)
        t_run = time.perf_counter()
        try:
            logger.info("▶️  Step 1: %s roadmap (delta_d=%g m) and A* search...", cfg.method, cfg.delta_d)
            t0 = time.perf_counter()
            raw = self._step1(map_, (sx, sy), (gx, gy), report)
            report.step1_time = time.perf_counter() - t0
            logger.info("✅ %d nodes, %d edges, %d explored, path %.1f m", report.node_count,
                        report.edge_count, report.explored, report.raw_length)

            logger.info("▶️  Step 2: %s refinement and warm start...", cfg.refinement)
            t0 = time.perf_counter()
            warm = self._step2(map_, raw, report)
            report.step2_time = time.perf_counter() - t0
            logger.info("✅ Warm start: %.1f m over %.1f s, cost %.4g", report.smoothed_length, report.t_max,
                        report.warm_start_cost)

            if self.steps.get('optimize'):
                logger.info("▶️  Step 3: solving the optimal control problem...")
                t0 = time.perf_counter()
                traj = self._step3(map_, warm, (sx, sy, s_psi), (gx, gy, g_psi), report)
                report.step3_time = time.perf_counter() - t0
                icon = "✅" if report.status == STATUS_CONVERGED else "⚠️ "
                logger.info("%s Step 3 %s: %d iterations, objective %.4g", icon, report.solver_status,
                            report.nlp_iterations, report.objective)
            else:
                logger.info("⏭️  Skipping Step 3: Optimize")
                traj = warm.with_metadata(status=STATUS_NOT_OPTIMIZED)
                report.status = STATUS_NOT_OPTIMIZED
                report.objective = traj.final_cost

            report.collision_free = traj.is_collision_free(map_)
            if not report.collision_free:
                logger.warning("Final trajectory fails the collision re-check; flagged best-effort")
                report.status = STATUS_BEST_EFFORT
                traj = traj.with_metadata(status=STATUS_BEST_EFFORT)
        finally:
            core_logger.removeHandler(collector)
            core_logger.setLevel(core_level)
            report.total_time = time.perf_counter() - t_run
            report.warnings = collector.messages
        return traj, report

    # ------------------------------------------------------------------
    def _step1(self, map_: PolygonMap, start, goal, report: RunReport) -> PiecewiseLinearPath:
        cfg = self.cfg
        if cfg.method == "voronoi":
            graph = build_voronoi_roadmap(map_, cfg.delta_d)
        else:
            graph = build_uniform_grid(map_, cfg.delta_d)
        report.node_count = graph.node_count
        report.edge_count = graph.edge_count
        joined = attach_endpoints(graph, start, goal, map_)
        result = astar(joined, *joined.endpoints)
        report.explored = result.explored
        report.raw_length = result.length
        self.artifacts.graph = graph
        self.artifacts.search = result
        self.artifacts.raw_path = result.path
        return result.path

    def _step2(self, map_: PolygonMap, raw: PiecewiseLinearPath, report: RunReport) -> TimedTrajectory:
        cfg = self.cfg
        if cfg.refinement == "improved":
            reduced = reduce_waypoints(raw, map_)
            refined = refine_corners(reduced, map_, samples_per_edge=cfg.samples_per_edge, tol=cfg.corner_tol,
                                     max_iter=cfg.corner_max_iter, history=self.artifacts.corner_history)
            cost_method = "heun"
        else:
            refined = prune_collinear(raw)
            cost_method = "rk4"
        gp = smooth_with_arcs(refined, self.turn_radius, map_)
        samples = assign_time(gp, cfg.cruise_speed, cfg.n_intervals, t_max=cfg.t_max)
        warm = build_warm_start(samples, self.vessel, weights=self.weights, cost_method=cost_method)
        report.refined_length = refined.length
        report.smoothed_length = gp.length
        report.t_max = samples.t_max
        report.warm_start_cost = warm.final_cost
        self.artifacts.refined_path = refined
        self.artifacts.geometric_path = gp
        self.artifacts.warm_start = warm
        self._horizon = samples.t_max
        return warm

    @property
    def turn_radius(self) -> float:
        if self.cfg.turn_radius is not None:
            return self.cfg.turn_radius
        rate = self.cfg.turn_rate_max or self.vessel.turn_rate_max
        return self.cfg.cruise_speed / rate

    def _step3(self, map_: PolygonMap, warm: TimedTrajectory, start, goal, report: RunReport) -> TimedTrajectory:
        cfg = self.cfg
        t_max = self._horizon
        s_psi = start[2] if start[2] is not None else float(warm.eta[0, 2])
        velocity = None if cfg.goal_speed is None else np.array([cfg.goal_speed, 0.0, 0.0])
        circles = tuple(obstacle_constraints(map_, cfg.obstacle_padding + map_.safety_margin,
                                             cfg.circles_per_piece))
        self.artifacts.circles = circles
        spec = OcpSpec(t_max, cfg.n_intervals, self.weights,
                       State((start[0], start[1], s_psi), (warm.nu[0, 0], 0.0, 0.0)),
                       GoalTarget(goal[:2], goal[2], velocity), map_.bounds, circles, cfg.n_substeps)
        nlp = transcribe(spec, self.vessel)
        opts = SolverOptions(cfg.tol_feas, cfg.tol_opt, cfg.max_outer, cfg.max_inner, cfg.time_budget,
                             cfg.solver_backend)

        guess = warm
        if not cfg.warm_start:
            guess = self._straight_line(start, goal, t_max)
            report.initialisation = "straight-line"
        try:
            sol = solve_nlp(nlp, pack_warm_start(guess, spec), opts)
        except WarmStartInvalidError as e:
            logger.warning("Initial guess rejected (%s); retrying from a straight line", e)
            report.initialisation = "straight-line"
            sol = solve_nlp(nlp, pack_warm_start(self._straight_line(start, goal, t_max), spec), opts)
        self.artifacts.solution = sol

        report.solver_status = sol.status.value
        report.nlp_iterations = sol.iterations
        report.outer_iterations = sol.outer_iterations
        report.max_violation = sol.max_violation
        if sol.converged:
            traj = extract_trajectory(sol, spec).with_metadata(status=STATUS_CONVERGED)
            report.status = STATUS_CONVERGED
        else:
            logger.warning("Step 3 ended with status '%s'; returning the warm start as best-effort",
                           sol.status.value)
            traj = warm.with_metadata(status=STATUS_BEST_EFFORT, solver_status=sol.status.value)
            report.status = STATUS_BEST_EFFORT
        report.objective = traj.final_cost
        return traj

    def _straight_line(self, start, goal, t_max: float) -> TimedTrajectory:
        return straight_line_guess(start[:2], goal[:2], self.vessel, self.cfg.n_intervals, t_max, self.weights)


def run_pipeline(map_: PolygonMap, start, goal, cfg: Optional[PlannerConfig] = None,
                 vessel: Optional[VesselParams] = None) -> Tuple[TimedTrajectory, RunReport]:
    return Planner(cfg, vessel).run(map_, start, goal)

import logging
import re

import numpy as np
import pytest

from config import PlannerConfig
from core.errors import ParameterError, UnreachableEndpointError
from core.geom import Bounds, Point2, Polygon, PolygonMap
from core.pipeline import Planner, parse_pose, run_pipeline
from core.render import ARTIFACT_NAMES, emit_artifacts
from core.report import read_trajectory_csv
from core.synthetic import archipelago, narrow_channel

WARM_ONLY = PlannerConfig(preset="warm_start_only", n_intervals=40)


@pytest.fixture
def empty_map():
    return PolygonMap(Bounds(0, 0, 1000, 600), ())


@pytest.fixture
def island_map():
    island = Polygon((Point2(400, 200), Point2(600, 200), Point2(600, 420), Point2(400, 420)))
    return PolygonMap(Bounds(0, 0, 1000, 600), (island,))


def test_parse_pose():
    assert parse_pose("10, 20") == (10.0, 20.0, None)
    assert parse_pose((1, 2, 0.5)) == (1.0, 2.0, 0.5)
    assert parse_pose((1, 2, None)) == (1.0, 2.0, None)
    for bad in ("1", "a,b", (1, 2, 3, 4), (1, float("nan"))):
        with pytest.raises(ParameterError):
            parse_pose(bad)


@pytest.mark.parametrize("method", ["uniform", "voronoi"])
def test_empty_map_warm_start(empty_map, method):
    traj, report = run_pipeline(empty_map, (100, 300), (900, 300), WARM_ONLY.replace(method=method))
    assert report.status == "not-optimized"
    assert report.solver_status is None
    assert report.collision_free
    assert report.raw_length >= 800.0 - 1e-9
    assert report.refined_length == pytest.approx(800.0)
    assert report.t_max == pytest.approx(800.0 / WARM_ONLY.cruise_speed)
    assert len(traj) == WARM_ONLY.n_intervals + 1
    assert traj.eta[0, :2] == pytest.approx([100.0, 300.0])
    assert traj.eta[-1, :2] == pytest.approx([900.0, 300.0])
    assert traj.metadata["status"] == "not-optimized"
    assert report.objective == pytest.approx(traj.final_cost)


def test_uniform_grid_straight_line_length(empty_map):
    _, report = run_pipeline(empty_map, (100, 300), (900, 300), WARM_ONLY.replace(method="uniform"))
    assert report.raw_length == pytest.approx(800.0)
    assert report.node_count == 11 * 7


def test_improved_refinement_is_not_longer(island_map):
    cfg = WARM_ONLY.replace(method="uniform", delta_d=50.0)
    _, original = run_pipeline(island_map, (100, 300), (900, 320), cfg.replace(refinement="original"))
    _, improved = run_pipeline(island_map, (100, 300), (900, 320), cfg.replace(refinement="improved"))
    assert original.refined_length == pytest.approx(original.raw_length)
    assert improved.refined_length <= original.refined_length + 1e-9
    assert improved.raw_length == pytest.approx(original.raw_length)


def test_narrow_channel_voronoi_versus_uniform():
    scenario = narrow_channel()
    _, voronoi = run_pipeline(scenario.map, scenario.start, scenario.goal,
                              WARM_ONLY.replace(method="voronoi", delta_d=25.0))
    _, uniform = run_pipeline(scenario.map, scenario.start, scenario.goal,
                              WARM_ONLY.replace(method="uniform", delta_d=100.0))
    straight = scenario.goal[0] - scenario.start[0]
    # the 100 m grid misses the channel and takes the long way round
    assert voronoi.refined_length == pytest.approx(straight, rel=1e-6)
    assert uniform.raw_length > straight + 300.0
    assert voronoi.collision_free


def test_unreachable_endpoint(island_map):
    with pytest.raises(UnreachableEndpointError):
        run_pipeline(island_map, (500, 300), (900, 300), WARM_ONLY)


def test_runs_are_deterministic(island_map):
    cfg = WARM_ONLY.replace(method="voronoi", delta_d=40.0)
    traj_a, rep_a = run_pipeline(island_map, (100, 300), (900, 320), cfg)
    traj_b, rep_b = run_pipeline(island_map, (100, 300), (900, 320), cfg)
    assert rep_a.to_dict()["run"] == rep_b.to_dict()["run"]
    assert np.array_equal(traj_a.states, traj_b.states)
    assert np.array_equal(traj_a.ctrl, traj_b.ctrl)


def test_artifacts(island_map, tmp_path):
    planner = Planner(WARM_ONLY.replace(method="uniform", delta_d=50.0))
    traj, report = planner.run(island_map, (100, 300), (900, 320))
    assert planner.artifacts.graph is not None
    assert planner.artifacts.warm_start is not None
    paths = emit_artifacts(traj, report, island_map, tmp_path / "run", planner.artifacts)
    assert set(paths) == set(ARTIFACT_NAMES)
    assert all(p.exists() for p in paths.values())
    scene = paths["scene"].read_text(encoding="utf-8")
    assert len(re.findall(r'id="obstacle-\d+"', scene)) == len(island_map.obstacles)
    back = read_trajectory_csv(paths["trajectory"])
    assert np.array_equal(back.states, traj.states)

    again = emit_artifacts(traj, report, island_map, tmp_path / "again", planner.artifacts)
    assert again["scene"].read_bytes() == paths["scene"].read_bytes()


@pytest.mark.slow
def test_warnings_are_reported_at_a_quiet_log_level(empty_map):
    root = logging.getLogger()
    level = root.level
    root.setLevel(logging.ERROR)
    try:
        _, report = run_pipeline(empty_map, (100, 300), (900, 300),
                                 PlannerConfig(n_intervals=10, time_budget=1e-9))
    finally:
        root.setLevel(level)
    assert report.status == "best-effort"
    assert any("best-effort" in message for message in report.warnings)
    assert logging.getLogger("core").level == logging.NOTSET


def test_full_pipeline_on_open_water(empty_map):
    cfg = PlannerConfig(method="uniform", n_intervals=20, max_outer=30)
    traj, report = run_pipeline(empty_map, (100, 300), (400, 300), cfg)
    assert np.isfinite(report.objective)
    assert report.step3_time > 0.0
    assert report.total_time >= report.steps_time
    assert report.solver_status == "converged"
    assert report.status == "converged"
    assert report.max_violation <= cfg.tol_feas
    assert traj.eta[-1, :2] == pytest.approx([400.0, 300.0], abs=1e-2)
    assert report.objective <= report.warm_start_cost


@pytest.mark.slow
def test_archipelago_converges_within_budget():
    scenario = archipelago(seed=0)
    cfg = PlannerConfig(n_intervals=100)
    traj, report = run_pipeline(scenario.map, scenario.start, scenario.goal, cfg)
    assert report.solver_status == "converged"
    assert report.status == "converged"
    assert report.max_violation <= 1e-6
    assert report.objective <= report.warm_start_cost
    assert report.total_time <= 120.0
    assert traj.eta[-1, :2] == pytest.approx(scenario.goal[:2], abs=0.1)


def test_voronoi_roadmap_is_sparse_and_faster():
    scenario = archipelago(seed=0)
    warm = PlannerConfig(preset="warm_start_only", n_intervals=100)
    _, voronoi = run_pipeline(scenario.map, scenario.start, scenario.goal,
                              warm.replace(method="voronoi", delta_d=100.0))
    _, uniform = run_pipeline(scenario.map, scenario.start, scenario.goal,
                              warm.replace(method="uniform", delta_d=50.0))
    assert voronoi.node_count <= 0.1 * uniform.node_count
    assert voronoi.step1_time + voronoi.step2_time < uniform.step1_time + uniform.step2_time
    assert voronoi.collision_free and uniform.collision_free


if __name__ == "__main__":
    pytest.main([__file__])

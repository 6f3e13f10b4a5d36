import json

import pytest

from core import __version__
from core.geom import Bounds, Point2, Polygon, PolygonMap
from core.parser import load_map, write_map
from core.synthetic import archipelago, two_islands
from main import EXIT_INPUT_ERROR, EXIT_OK, EXIT_PLANNER_FAILURE, main


@pytest.fixture
def map_file(tmp_path):
    island = Polygon((Point2(400, 200), Point2(600, 200), Point2(600, 420), Point2(400, 420)))
    return write_map(PolygonMap(Bounds(0, 0, 1000, 600), (island,)), tmp_path / "map.txt")


def _plan(map_file, out, start="100,300", goal="900,320", *extra):
    return main(["plan", "--map", str(map_file), f"--start={start}", f"--goal={goal}",
                 "--preset", "warm_start_only", "--method", "uniform", "--delta-d", "50",
                 "--n-intervals", "20", "--out", str(out), *extra])


def test_plan_writes_artifacts(map_file, tmp_path):
    out = tmp_path / "out"
    assert _plan(map_file, out) == EXIT_OK
    for name in ("trajectory.csv", "report.json", "scene.svg", "states.svg"):
        assert (out / name).exists()
    report = json.loads((out / "report.json").read_text(encoding="utf-8"))
    assert report["run"]["method"] == "uniform"
    assert report["run"]["preset"] == "warm_start_only"
    assert report["run"]["n_intervals"] == 20


def test_plan_config_file(map_file, tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"refinement": "original", "cruise_speed": 2.0}), encoding="utf-8")
    out = tmp_path / "out"
    assert _plan(map_file, out, "100,300", "900,320", "--config", str(cfg)) == EXIT_OK
    report = json.loads((out / "report.json").read_text(encoding="utf-8"))
    assert report["run"]["refinement"] == "original"


def test_input_errors_exit_3(map_file, tmp_path):
    out = tmp_path / "out"
    assert _plan(tmp_path / "missing.txt", out) == EXIT_INPUT_ERROR
    assert _plan(map_file, out, "100") == EXIT_INPUT_ERROR
    assert _plan(map_file, out, "100,300", "900,320", "--t-max", "-5") == EXIT_INPUT_ERROR


def test_planner_failure_exits_2(map_file, tmp_path):
    # start on the island
    assert _plan(map_file, tmp_path / "out", "500,300") == EXIT_PLANNER_FAILURE


def test_synth(tmp_path):
    path = tmp_path / "channel.txt"
    assert main(["synth", "--kind", "narrow-channel", "--output", str(path)]) == EXIT_OK
    assert len(load_map(path).obstacles) == 2
    arch = tmp_path / "arch.txt"
    assert main(["synth", "--kind", "archipelago", "--seed", "3", "--output", str(arch)]) == EXIT_OK
    again = tmp_path / "again.txt"
    main(["synth", "--kind", "archipelago", "--seed", "3", "--output", str(again)])
    assert arch.read_text(encoding="utf-8") == again.read_text(encoding="utf-8")


def test_plan_on_synthetic_map_uses_seed(tmp_path):
    out = tmp_path / "out"
    assert main(["--seed", "2", "plan", "--synthetic", "two-islands", "--preset", "warm_start_only",
                 "--n-intervals", "20", "--out", str(out)]) == EXIT_OK
    report = json.loads((out / "report.json").read_text(encoding="utf-8"))
    assert report["run"]["seed"] == 2
    expected = write_map(two_islands(seed=2).map, tmp_path / "expected.txt")
    assert (out / "map.txt").read_text(encoding="utf-8") == expected.read_text(encoding="utf-8")


def test_plan_needs_poses_with_a_map_file(map_file, tmp_path):
    assert main(["plan", "--map", str(map_file), "--out", str(tmp_path / "out")]) == EXIT_INPUT_ERROR


def test_log_level_choices(tmp_path):
    path = tmp_path / "channel.txt"
    assert main(["--log-level", "debug", "synth", "--kind", "narrow-channel", "--output", str(path)]) == EXIT_OK
    assert main(["synth", "--kind", "narrow-channel", "--log-level", "warning", "--output", str(path)]) == EXIT_OK
    with pytest.raises(SystemExit) as exc:
        main(["--log-level", "LOUD", "synth", "--output", str(path)])
    assert exc.value.code == 2


def test_seed_before_or_after_subcommand(tmp_path):
    before, after = tmp_path / "before.txt", tmp_path / "after.txt"
    main(["--seed", "5", "synth", "--output", str(before)])
    main(["synth", "--seed", "5", "--output", str(after)])
    assert before.read_text(encoding="utf-8") == after.read_text(encoding="utf-8")
    assert before.read_text(encoding="utf-8") == write_map(archipelago(seed=5).map, tmp_path / "x.txt").read_text(
        encoding="utf-8")


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert __version__ in capsys.readouterr().out


if __name__ == "__main__":
    pytest.main([__file__])

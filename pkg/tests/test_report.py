import json

import numpy as np
import pytest

from core.errors import MalformedInputError
from core.refine import TimedTrajectory
from core.report import (TRAJECTORY_COLUMNS, RunReport, load_report, read_trajectory_csv, save_report,
                         trajectory_table, write_trajectory_csv)


@pytest.fixture
def trajectory():
    rng = np.random.default_rng(5)
    n = 7
    t = np.linspace(0.0, 1.0 / 3.0 * 18, n)
    return TimedTrajectory(t, rng.normal(size=(n, 3)) * 1e3, rng.normal(size=(n, 3)),
                           rng.normal(size=(n, 2)) * 1e3, np.cumsum(rng.random(n)) / 7.0)


@pytest.fixture
def report():
    return RunReport(method="voronoi", status="optimal", node_count=120, edge_count=300,
                     raw_length=1234.5, objective=0.81, warnings=["duplicate vertex"],
                     step1_time=0.1, step2_time=0.2, step3_time=3.0, total_time=3.4)


def test_to_dict_separates_timing(report):
    data = report.to_dict()
    assert set(data) == {"run", "timing"}
    assert data["timing"]["step3_time"] == 3.0
    assert "total_time" not in data["run"]
    assert RunReport.from_dict(data) == report
    assert report.steps_time == pytest.approx(3.3)
    assert not report.best_effort


def test_from_dict_ignores_unknown_keys():
    rep = RunReport.from_dict({"run": {"method": "uniform", "colour": "red"}})
    assert rep.method == "uniform"
    assert rep.status == "not-run"


def test_save_and_load(report, tmp_path):
    path = save_report(report, tmp_path / "out" / "report.json")
    assert load_report(path) == report
    again = save_report(report, tmp_path / "again.json")
    assert path.read_bytes() == again.read_bytes()
    assert json.loads(path.read_text(encoding="utf-8"))["run"]["warnings"] == ["duplicate vertex"]


def test_trajectory_csv_is_bit_exact(trajectory, tmp_path):
    path = write_trajectory_csv(trajectory, tmp_path / "trajectory.csv")
    assert path.read_text(encoding="utf-8").splitlines()[0] == ",".join(TRAJECTORY_COLUMNS)
    back = read_trajectory_csv(path)
    assert np.array_equal(trajectory_table(back), trajectory_table(trajectory))
    assert back.metadata["source"] == str(path)


def test_trajectory_csv_header_checked(trajectory, tmp_path):
    path = write_trajectory_csv(trajectory, tmp_path / "trajectory.csv")
    lines = path.read_text(encoding="utf-8").splitlines()
    bad = tmp_path / "bad.csv"
    bad.write_text("\n".join(["t,x,y"] + lines[1:]) + "\n", encoding="utf-8")
    with pytest.raises(MalformedInputError):
        read_trajectory_csv(bad)


if __name__ == "__main__":
    pytest.main([__file__])

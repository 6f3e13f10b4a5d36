import json

import pytest

from config import Config, PlannerConfig, _env_float, _env_int
from core.errors import ConfigError


def test_apply_preset_all():
    steps = Config.apply_preset('all')
    assert all(steps.values())
    assert list(steps) == list(Config.PIPELINE_STEPS)


def test_apply_preset_warm_start_only():
    steps = Config.apply_preset('warm_start_only')
    assert steps['roadmap'] and steps['refine'] and steps['emit_artifacts']
    assert not steps['optimize']


def test_apply_preset_unknown():
    with pytest.raises(ConfigError):
        Config.apply_preset('everything')


def test_defaults_are_valid():
    cfg = PlannerConfig().validate()
    assert cfg.method in Config.METHODS
    assert cfg.preset == 'all'
    assert cfg.t_max is None


@pytest.mark.parametrize("changes", [
    {"method": "rrt"},
    {"refinement": "magic"},
    {"solver_backend": "ipopt"},
    {"preset": "nope"},
    {"delta_d": 0.0},
    {"cruise_speed": -1.0},
    {"t_max": 0.0},
    {"n_intervals": 1},
    {"samples_per_edge": 1},
    {"safety_margin": -0.5},
    {"goal_speed": -1.0},
])
def test_validate_rejects(changes):
    with pytest.raises(ConfigError):
        PlannerConfig().replace(**changes).validate()


def test_replace_unknown_key():
    with pytest.raises(ConfigError):
        PlannerConfig().replace(delta=3)


def test_from_dict_accepts_dashed_keys():
    cfg = PlannerConfig.from_dict({"delta-d": 25.0, "method": "uniform"})
    assert cfg.delta_d == 25.0
    assert cfg.method == "uniform"
    assert PlannerConfig.from_dict(cfg.to_dict()) == cfg


def test_from_json(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"n_intervals": 40, "refinement": "original"}), encoding="utf-8")
    base = PlannerConfig(seed=7)
    cfg = PlannerConfig.from_json(path, base)
    assert (cfg.n_intervals, cfg.refinement, cfg.seed) == (40, "original", 7)


def test_from_json_errors(tmp_path):
    with pytest.raises(ConfigError):
        PlannerConfig.from_json(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{\n  \"n_intervals\": ,\n}", encoding="utf-8")
    with pytest.raises(ConfigError) as exc:
        PlannerConfig.from_json(bad)
    assert ":2:" in str(exc.value)
    listed = tmp_path / "list.json"
    listed.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(ConfigError):
        PlannerConfig.from_json(listed)


def test_env_helpers(monkeypatch):
    monkeypatch.setenv("PLANNER_TEST_VALUE", "2.5")
    assert _env_float("PLANNER_TEST_VALUE", 1.0) == 2.5
    monkeypatch.setenv("PLANNER_TEST_VALUE", "")
    assert _env_float("PLANNER_TEST_VALUE", 1.0) == 1.0
    monkeypatch.setenv("PLANNER_TEST_VALUE", "many")
    with pytest.raises(ConfigError):
        _env_float("PLANNER_TEST_VALUE", 1.0)
    monkeypatch.setenv("PLANNER_TEST_VALUE", "40")
    assert _env_int("PLANNER_TEST_VALUE", 1) == 40
    monkeypatch.setenv("PLANNER_TEST_VALUE", "4.5")
    with pytest.raises(ConfigError):
        _env_int("PLANNER_TEST_VALUE", 1)


if __name__ == "__main__":
    pytest.main([__file__])

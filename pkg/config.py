import json
import os
from dataclasses import asdict, dataclass, fields, replace as dc_replace
from pathlib import Path
from typing import Any, Dict, Optional

from dotenv import load_dotenv

from core.errors import ConfigError

# Load environment variables from .env file
env_path = Path(__file__).parent / '.env'
load_dotenv(dotenv_path=env_path)


def _env_float(key, default):
    value = os.getenv(key)
    if value is None or value == "":
        return default
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{key} must be a number, got '{value}'") from None


def _env_int(key, default):
    value = _env_float(key, default)
    if value != int(value):
        raise ConfigError(f"{key} must be an integer, got '{value}'")
    return int(value)


class Config:
    # Planner defaults. Every value can be overridden in .env
    # (see .env.example), then by --config FILE, then by CLI flags.
    METHOD = os.getenv("PLANNER_METHOD", "voronoi")
    DELTA_D = _env_float("PLANNER_DELTA_D", 100.0)
    CRUISE_SPEED = _env_float("PLANNER_CRUISE_SPEED", 3.0)
    N_INTERVALS = _env_int("PLANNER_N_INTERVALS", 100)
    K_E = _env_float("PLANNER_K_E", 1.0)
    K_T = _env_float("PLANNER_K_T", 10000.0)
    SAFETY_MARGIN = _env_float("PLANNER_SAFETY_MARGIN", 0.0)
    VESSEL_FILE = os.getenv("PLANNER_VESSEL_FILE") or None

    # Solver Settings
    TOL_FEAS = _env_float("SOLVER_TOL_FEAS", 1e-6)
    TOL_OPT = _env_float("SOLVER_TOL_OPT", 1e-4)
    MAX_OUTER = _env_int("SOLVER_MAX_OUTER", 30)
    MAX_INNER = _env_int("SOLVER_MAX_INNER", 3000)
    TIME_BUDGET = _env_float("SOLVER_TIME_BUDGET", 120.0)

    # Output Settings
    OUTPUT_DIR = os.getenv("OUTPUT_DIR", "output")
    ASSETS_DIR = str(Path(__file__).parent / "assets")
    LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
    LOG_FILE_NAME = "planner.log"

    # Benchmark Settings
    BENCH_WORKERS = _env_int("BENCH_WORKERS", 1)
    BENCH_CONFIGS = str(Path(__file__).parent / "assets" / "bench_configs.json")

    # Pipeline Step Configuration
    PIPELINE_STEPS = {
        'roadmap': True,         # Step 1: discretise the map and run A*
        'refine': True,          # Step 2: refine the path into a warm start
        'optimize': True,        # Step 3: solve the OCP from the warm start
        'emit_artifacts': True,  # CSV, report and SVG files
    }

    PIPELINE_PRESETS = {
        'warm_start_only': ['roadmap', 'refine', 'emit_artifacts'],
        'all': list(PIPELINE_STEPS.keys()),
    }

    METHODS = ('voronoi', 'uniform')
    REFINEMENTS = ('improved', 'original')
    BACKENDS = ('auglag', 'trust-constr')

    @staticmethod
    def apply_preset(preset_name):
        """Return the PIPELINE_STEPS switches for a preset."""
        if preset_name not in Config.PIPELINE_PRESETS:
            raise ConfigError(f"Unknown preset: {preset_name}. Available: {list(Config.PIPELINE_PRESETS.keys())}")
        enabled = Config.PIPELINE_PRESETS[preset_name]
        return {step: step in enabled for step in Config.PIPELINE_STEPS}


@dataclass(frozen=True)
class PlannerConfig:
    """Settings of one planner run."""
    method: str = Config.METHOD
    delta_d: float = Config.DELTA_D
    cruise_speed: float = Config.CRUISE_SPEED
    t_max: Optional[float] = None
    n_intervals: int = Config.N_INTERVALS
    k_e: float = Config.K_E
    k_t: float = Config.K_T
    eps_e: float = 1e-3
    eps_t: float = 1e-3
    refinement: str = "improved"
    samples_per_edge: int = 8
    corner_tol: float = 0.1
    corner_max_iter: int = 50
    turn_radius: Optional[float] = None
    turn_rate_max: Optional[float] = None
    safety_margin: float = Config.SAFETY_MARGIN
    obstacle_padding: float = 0.0
    circles_per_piece: int = 1
    goal_speed: Optional[float] = None
    warm_start: bool = True
    solver_backend: str = "auglag"
    tol_feas: float = Config.TOL_FEAS
    tol_opt: float = Config.TOL_OPT
    max_outer: int = Config.MAX_OUTER
    max_inner: int = Config.MAX_INNER
    time_budget: float = Config.TIME_BUDGET
    n_substeps: int = 4
    vessel_file: Optional[str] = Config.VESSEL_FILE
    seed: int = 0
    preset: str = "all"

    def validate(self) -> "PlannerConfig":
        if self.method not in Config.METHODS:
            raise ConfigError(f"method must be one of {Config.METHODS}, got '{self.method}'")
        if self.refinement not in Config.REFINEMENTS:
            raise ConfigError(f"refinement must be one of {Config.REFINEMENTS}, got '{self.refinement}'")
        if self.solver_backend not in Config.BACKENDS:
            raise ConfigError(f"solver_backend must be one of {Config.BACKENDS}, got '{self.solver_backend}'")
        if self.preset not in Config.PIPELINE_PRESETS:
            raise ConfigError(f"preset must be one of {list(Config.PIPELINE_PRESETS)}, got '{self.preset}'")
        positive = ("delta_d", "cruise_speed", "k_e", "k_t", "tol_feas", "tol_opt", "time_budget",
                    "t_max", "turn_radius", "turn_rate_max")
        for name in positive:
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ConfigError(f"{name} must be > 0, got {value}")
        at_least = {"n_intervals": 2, "samples_per_edge": 2, "corner_max_iter": 1, "circles_per_piece": 1,
                    "max_outer": 1, "max_inner": 1, "n_substeps": 1}
        for name, low in at_least.items():
            if int(getattr(self, name)) < low:
                raise ConfigError(f"{name} must be >= {low}, got {getattr(self, name)}")
        for name in ("eps_e", "eps_t", "corner_tol", "safety_margin", "obstacle_padding"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.goal_speed is not None and self.goal_speed < 0:
            raise ConfigError(f"goal_speed must be >= 0, got {self.goal_speed}")
        return self

    def replace(self, **changes) -> "PlannerConfig":
        unknown = set(changes) - {f.name for f in fields(self)}
        if unknown:
            raise ConfigError(f"Unknown config key(s): {', '.join(sorted(unknown))}")
        return dc_replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any], base: Optional["PlannerConfig"] = None) -> "PlannerConfig":
        base = base or cls()
        data = {k.replace("-", "_"): v for k, v in data.items()}
        return base.replace(**data).validate()

    @classmethod
    def from_json(cls, path, base: Optional["PlannerConfig"] = None) -> "PlannerConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Config file not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}:{e.lineno}: invalid JSON: {e.msg}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        return cls.from_dict(data, base)

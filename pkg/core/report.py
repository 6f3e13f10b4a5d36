import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from core.errors import MalformedInputError
from core.refine import TimedTrajectory

logger = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = ("t", "x", "y", "psi", "u", "v", "r", "X", "N", "cum_cost")
# 17 significant digits round-trip every double
CSV_FORMAT = "%.17g"


@dataclass
class RunReport:
    method: str
    refinement: str = "improved"
    preset: str = "all"
    status: str = "not-run"
    solver_status: Optional[str] = None
    initialisation: str = "warm-start"
    node_count: int = 0
    edge_count: int = 0
    explored: int = 0
    raw_length: float = 0.0
    refined_length: float = 0.0
    smoothed_length: float = 0.0
    warm_start_cost: Optional[float] = None
    objective: Optional[float] = None
    nlp_iterations: int = 0
    outer_iterations: int = 0
    max_violation: Optional[float] = None
    n_intervals: int = 0
    t_max: float = 0.0
    delta_d: float = 0.0
    collision_free: bool = False
    seed: int = 0
    warnings: List[str] = field(default_factory=list)
    step1_time: float = 0.0
    step2_time: float = 0.0
    step3_time: float = 0.0
    total_time: float = 0.0

    TIMING_FIELDS = ("step1_time", "step2_time", "step3_time", "total_time")

    @property
    def steps_time(self) -> float:
        return self.step1_time + self.step2_time + self.step3_time

    @property
    def best_effort(self) -> bool:
        return self.status == "best-effort"

    def to_dict(self) -> Dict[str, Any]:
        """Timing values go to their own section so the rest compares byte for byte."""
        data = asdict(self)
        timing = {k: data.pop(k) for k in self.TIMING_FIELDS}
        return {"run": data, "timing": timing}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunReport":
        flat = {**data.get("run", {}), **data.get("timing", {})}
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in flat.items() if k in known})


def save_report(report: RunReport, path: Union[str, Path]) -> Path:
    """Write report.json."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")
    logger.info("💾 Report saved to: %s", path)
    return path


def load_report(path: Union[str, Path]) -> RunReport:
    path = Path(path)
    with open(path, 'r', encoding='utf-8') as f:
        data = json.load(f)
    logger.debug("📂 Report loaded from: %s", path)
    return RunReport.from_dict(data)


def trajectory_table(traj: TimedTrajectory) -> np.ndarray:
    return np.column_stack([traj.t, traj.eta, traj.nu, traj.ctrl, traj.cum_cost])


def write_trajectory_csv(traj: TimedTrajectory, path: Union[str, Path]) -> Path:
    """One row per sample: t,x,y,psi,u,v,r,X,N,cum_cost."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, trajectory_table(traj), fmt=CSV_FORMAT, delimiter=",",
               header=",".join(TRAJECTORY_COLUMNS), comments="")
    return path


def read_trajectory_csv(path: Union[str, Path]) -> TimedTrajectory:
    path = Path(path)
    with open(path, 'r', encoding='utf-8') as f:
        header = f.readline().strip()
    if tuple(header.split(",")) != TRAJECTORY_COLUMNS:
        raise MalformedInputError(f"{path}: unexpected header '{header}'")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != len(TRAJECTORY_COLUMNS):
        raise MalformedInputError(f"{path}: expected {len(TRAJECTORY_COLUMNS)} columns, got {data.shape[1]}")
    return TimedTrajectory(data[:, 0], data[:, 1:4], data[:, 4:7], data[:, 7:9], data[:, 9],
                           {"source": str(path)})

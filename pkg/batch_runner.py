import argparse
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from tqdm import tqdm

from config import Config, PlannerConfig
from core.errors import ConfigError, InputError, ParameterError, PlannerError
from core.geom import PolygonMap
from core.parser import load_map
from core.pipeline import Planner
from core.render import emit_artifacts
from core.report import RunReport
from core.roadmap import build_uniform_grid, build_voronoi_roadmap
from core.synthetic import make_scenario

logger = logging.getLogger(__name__)

NODE_MATCH_TOL = 0.05


@dataclass
class BenchRun:
    name: str
    cfg: PlannerConfig
    # name of the run whose roadmap node count this run's delta_d is tuned to
    match_nodes_of: Optional[str] = None
    matched_nodes: Optional[int] = None
    target_nodes: Optional[int] = None


@dataclass
class BenchRow:
    name: str
    report: Optional[RunReport] = None
    error: Optional[str] = None
    matched_nodes: Optional[int] = None
    target_nodes: Optional[int] = None

    @property
    def status(self) -> str:
        if self.error:
            return "failed"
        return self.report.status if self.report else "not-run"

    def to_dict(self) -> Dict[str, Any]:
        data = {"name": self.name, "status": self.status, "error": self.error,
                "matched_nodes": self.matched_nodes, "target_nodes": self.target_nodes}
        if self.report is not None:
            data.update(self.report.to_dict())
        return data


@dataclass
class BenchmarkResult:
    rows: List[BenchRow] = field(default_factory=list)

    def row(self, name: str) -> BenchRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_dict(self) -> Dict[str, Any]:
        return {"runs": [r.to_dict() for r in self.rows]}


def node_count(map_: PolygonMap, method: str, delta_d: float) -> int:
    if method == "voronoi":
        return build_voronoi_roadmap(map_, delta_d).node_count
    return build_uniform_grid(map_, delta_d).node_count


def match_node_count(map_: PolygonMap, target: int, method: str = "uniform", tol: float = NODE_MATCH_TOL,
                     max_iter: int = 40) -> Dict[str, float]:
    """Bisect delta_d (log scale) until the roadmap has ``target`` nodes within ``tol``.

    Node counts fall as delta_d grows, so the bracket [lo, hi] always keeps
    count(lo) >= target >= count(hi). The closest count seen is returned.
    """
    if target < 1:
        raise ParameterError(f"Target node count must be >= 1, got {target}")
    b = map_.bounds
    top = min(b.width, b.height)
    guess = min(math.sqrt(b.width * b.height / target), top)
    lo, hi = guess / 2.0, min(guess * 1.5, top)
    seen: Dict[float, int] = {}

    def count(d):
        if d not in seen:
            seen[d] = node_count(map_, method, d)
        return seen[d]

    for _ in range(20):
        if count(lo) >= target:
            break
        lo /= 1.5
    for _ in range(20):
        if count(hi) <= target or hi >= top:
            break
        hi = min(hi * 1.5, top)

    def best():
        d = min(seen, key=lambda k: (abs(seen[k] - target), k))
        return d, seen[d]

    for _ in range(max_iter):
        d, n = best()
        if abs(n - target) <= tol * target:
            break
        mid = math.sqrt(lo * hi)
        if count(mid) >= target:
            lo = mid
        else:
            hi = mid
        if hi / lo < 1.0 + 1e-9:
            break
    d, n = best()
    if abs(n - target) > tol * target:
        logger.warning("Node matching reached %d nodes for a target of %d (delta_d=%.3f m)", n, target, d)
    return {"delta_d": d, "nodes": n}


def _execute(name, map_, start, goal, cfg, out_dir, emit) -> BenchRow:
    try:
        planner = Planner(cfg)
        traj, report = planner.run(map_, start, goal)
        if emit and out_dir is not None:
            emit_artifacts(traj, report, map_, Path(out_dir) / name, planner.artifacts)
        return BenchRow(name, report)
    except (InputError, PlannerError) as e:
        return BenchRow(name, error=f"{type(e).__name__}: {e}")


def resolve_runs(map_: PolygonMap, runs: Sequence[BenchRun]) -> List[BenchRun]:
    """Fix delta_d of every run that matches another run's node count."""
    by_name = {r.name: r for r in runs}
    for run in runs:
        if run.match_nodes_of is None:
            continue
        ref = by_name.get(run.match_nodes_of)
        if ref is None or ref.match_nodes_of is not None:
            raise ConfigError(f"Run '{run.name}' matches unknown or matched run '{run.match_nodes_of}'")
        target = node_count(map_, ref.cfg.method, ref.cfg.delta_d)
        match = match_node_count(map_, target, run.cfg.method)
        run.cfg = run.cfg.replace(delta_d=match["delta_d"])
        run.matched_nodes = int(match["nodes"])
        run.target_nodes = target
        print(f"✅ {run.name}: delta_d={match['delta_d']:.2f} m gives {run.matched_nodes} nodes "
              f"(target {target} from {ref.name})")
    return list(runs)


def run_benchmark(map_: PolygonMap, start, goal, runs: Sequence[BenchRun], out_dir=None,
                  workers: int = 1, emit: bool = True) -> BenchmarkResult:
    if len(runs) < 2:
        raise ParameterError(f"A benchmark needs at least 2 configs, got {len(runs)}")
    names = [r.name for r in runs]
    if len(set(names)) != len(names):
        raise ConfigError("Benchmark run names must be unique")
    runs = resolve_runs(map_, runs)
    jobs = [(r.name, map_, start, goal, r.cfg, out_dir, emit) for r in runs]
    rows: Dict[str, BenchRow] = {}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_execute, *job) for job in jobs]
            for fut in tqdm(as_completed(futures), total=len(futures), desc="Benchmark"):
                row = fut.result()
                rows[row.name] = row
    else:
        for job in tqdm(jobs, desc="Benchmark"):
            row = _execute(*job)
            rows[row.name] = row
    result = BenchmarkResult([rows[n] for n in names])
    for run in runs:
        row = result.row(run.name)
        row.matched_nodes, row.target_nodes = run.matched_nodes, run.target_nodes
    return result


def _fmt(value, spec):
    return "-" if value is None else format(value, spec)


def format_comparison(result: BenchmarkResult) -> str:
    """Markdown table: one column per run, one row per metric."""
    cols = result.rows
    lines = ["| | " + " | ".join(r.name for r in cols) + " |",
             "|---|" + "---|" * len(cols)]

    def add(label, getter):
        cells = []
        for r in cols:
            cells.append("-" if r.report is None else getter(r.report))
        lines.append(f"| {label} | " + " | ".join(cells) + " |")

    add("Method", lambda p: f"{p.method} ({p.refinement})")
    add("delta_d [m]", lambda p: _fmt(p.delta_d, ".1f"))
    add("Roadmap nodes", lambda p: str(p.node_count))
    add("Energy cost", lambda p: _fmt(p.objective, ".4g"))
    add("Run time total [s]", lambda p: _fmt(p.total_time, ".2f"))
    add("Run time Step 1 [s]", lambda p: _fmt(p.step1_time, ".2f"))
    add("Run time Step 2 [s]", lambda p: _fmt(p.step2_time, ".2f"))
    add("Run time Step 1+2 [s]", lambda p: _fmt(p.step1_time + p.step2_time, ".2f"))
    add("Run time Step 3 [s]", lambda p: _fmt(p.step3_time, ".2f"))
    add("Step 3 iterations", lambda p: str(p.nlp_iterations))
    lines.append("| Status | " + " | ".join(r.status if not r.error else f"failed: {r.error}" for r in cols) + " |")
    return "\n".join(lines) + "\n"


def load_bench_configs(path, base: Optional[PlannerConfig] = None) -> Dict[str, Any]:
    """``{"start": [...], "goal": [...], "base": {...}, "runs": [{"name": ..., ...}]}``."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Benchmark config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}: invalid JSON: {e.msg}") from e
    base = PlannerConfig.from_dict(data.get("base", {}), base or PlannerConfig())
    runs = []
    for i, entry in enumerate(data.get("runs", [])):
        entry = dict(entry)
        name = entry.pop("name", f"R{i + 1}")
        match = entry.pop("match_nodes_of", None)
        runs.append(BenchRun(name, PlannerConfig.from_dict(entry, base), match))
    return {"start": data.get("start"), "goal": data.get("goal"), "runs": runs}


class BenchmarkRunner:
    def __init__(self, map_file=None, config_file=None, out_dir=None, workers=None, start=None, goal=None,
                 seed=None, synthetic=None):
        if (map_file is None) == (synthetic is None):
            raise ParameterError("Give either a map file or a synthetic scenario")
        self.map_file = Path(map_file) if map_file is not None else None
        self.synthetic = synthetic
        self.config_file = Path(config_file or Config.BENCH_CONFIGS)
        self.output_dir = Path(out_dir or Config.OUTPUT_DIR)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.workers = workers or Config.BENCH_WORKERS
        self.start, self.goal, self.seed = start, goal, seed
        self.bench_log_file = self.output_dir / "benchmark.log"

    def log(self, message):
        timestamp = datetime.now().isoformat()
        formatted_message = f"[{timestamp}] {message}"
        print(formatted_message)
        with open(self.bench_log_file, 'a', encoding='utf-8') as f:
            f.write(formatted_message + "\n")

    def run(self) -> BenchmarkResult:
        self.log("Starting benchmark...")
        self.log(f"Map: {self.map_file or self.synthetic}")
        self.log(f"Configs: {self.config_file}")
        self.log(f"Output Directory: {self.output_dir}")
        base = PlannerConfig() if self.seed is None else PlannerConfig(seed=self.seed)
        bench = load_bench_configs(self.config_file, base)
        start, goal = bench["start"], bench["goal"]
        if self.synthetic:
            scenario = make_scenario(self.synthetic, base.seed)
            self.log(f"Synthetic map: {scenario.name} (seed {base.seed})")
            map_, start, goal = scenario.map, scenario.start, scenario.goal
        else:
            map_ = load_map(self.map_file)
        start = self.start or start
        goal = self.goal or goal
        if start is None or goal is None:
            raise ConfigError("Start and goal must be given in the config file or on the command line")
        self.log(f"Found {len(bench['runs'])} runs: {', '.join(r.name for r in bench['runs'])}")

        result = run_benchmark(map_, start, goal, bench["runs"], self.output_dir, self.workers)
        for row in result.rows:
            if row.error:
                self.log(f"❌ {row.name} failed: {row.error}")
            else:
                self.log(f"✅ {row.name}: {row.status}, objective {row.report.objective:.4g}, "
                         f"{row.report.total_time:.2f} s")

        table = format_comparison(result)
        md_path = self.output_dir / "comparison.md"
        md_path.write_text(table, encoding="utf-8")
        json_path = self.output_dir / "comparison.json"
        json_path.write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        print(table)
        failed = sum(1 for r in result.rows if r.error)
        self.log(f"Total: {len(result.rows)}, Success: {len(result.rows) - failed}, Failed: {failed}")
        self.log(f"Comparison saved to: {md_path}")
        return result


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="ASV planner benchmark")
    parser.add_argument("--map", required=True, help="Map file")
    parser.add_argument("--configs", help="Benchmark configuration file (json)")
    parser.add_argument("--out", help="Output directory")
    parser.add_argument("--workers", type=int, help="Parallel worker processes")
    args = parser.parse_args()

    logging.basicConfig(level=Config.LOG_LEVEL, format="%(levelname)s %(name)s: %(message)s")
    try:
        BenchmarkRunner(args.map, args.configs, args.out, args.workers).run()
    except InputError as e:
        print(f"❌ {e}")
        sys.exit(3)

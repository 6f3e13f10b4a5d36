import argparse
import logging
import sys
from datetime import datetime
from pathlib import Path

from config import Config, PlannerConfig
from core import __version__
from core.errors import InputError, ParameterError, PlannerError
from core.parser import load_map, write_map
from core.pipeline import Planner
from core.render import emit_artifacts
from core.synthetic import SCENARIOS, make_scenario

EXIT_OK = 0
EXIT_PLANNER_FAILURE = 2
EXIT_INPUT_ERROR = 3

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


class DualLogger:
    """Logger that writes to both console and file."""
    def __init__(self, log_file):
        self.terminal = sys.stdout
        self.log_file = open(log_file, 'a', encoding='utf-8')
        self.log_file.write(f"\n{'='*80}\n")
        self.log_file.write(f"Run started at: {datetime.now().isoformat()}\n")
        self.log_file.write(f"{'='*80}\n\n")

    def write(self, message):
        self.terminal.write(message)
        self.log_file.write(message)
        self.log_file.flush()

    def flush(self):
        self.terminal.flush()
        self.log_file.flush()

    def close(self):
        self.log_file.write(f"\n{'='*80}\n")
        self.log_file.write(f"Run ended at: {datetime.now().isoformat()}\n")
        self.log_file.write(f"{'='*80}\n\n")
        self.log_file.close()


def build_config(args) -> PlannerConfig:
    """Config defaults, then --config FILE, then command-line flags."""
    cfg = PlannerConfig()
    if getattr(args, 'config', None):
        cfg = PlannerConfig.from_json(args.config, cfg)
    overrides = {}
    for key in ('method', 'delta_d', 'preset', 'seed', 'n_intervals', 't_max', 'cruise_speed', 'refinement'):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    return cfg.replace(**overrides).validate()


def plan_command(args) -> int:
    cfg = build_config(args)
    out_dir = Path(args.out or Config.OUTPUT_DIR)
    steps = Config.apply_preset(cfg.preset)
    start, goal = args.start, args.goal
    if args.synthetic:
        scenario = make_scenario(args.synthetic, cfg.seed)
        print(f"🚀 Planning on: {scenario.name} (seed {cfg.seed})")
        map_ = scenario.map
        start = start or scenario.start
        goal = goal or scenario.goal
    else:
        print(f"🚀 Planning on: {args.map}")
        map_ = load_map(args.map)
    if start is None or goal is None:
        raise ParameterError("--start and --goal are required with --map")
    print(f"📋 Active steps: {[step for step, active in steps.items() if active]}")
    planner = Planner(cfg)
    traj, report = planner.run(map_, start, goal)
    if args.synthetic:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_map(map_, out_dir / "map.txt")
    if steps.get('emit_artifacts'):
        emit_artifacts(traj, report, map_, out_dir, planner.artifacts)
    else:
        print("⏭️  Skipping artifacts")
    if report.status != "converged":
        print(f"⚠️  Result status: {report.status}")
    print(f"🎉 Done in {report.total_time:.2f} s, energy cost {report.objective:.4g}")
    return EXIT_OK


def bench_command(args) -> int:
    from batch_runner import BenchmarkRunner

    BenchmarkRunner(args.map, args.configs, args.out, args.workers, args.start, args.goal, args.seed,
                    synthetic=args.synthetic).run()
    return EXIT_OK


def _pose_text(pose) -> str:
    return ",".join(f"{v:g}" for v in pose)


def synth_command(args) -> int:
    scenario = make_scenario(args.kind, args.seed or 0)
    path = write_map(scenario.map, args.output)
    print(f"💾 {scenario.name} map saved to: {path}")
    print(f"   --start={_pose_text(scenario.start)} --goal={_pose_text(scenario.goal)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="ASV trajectory planner: roadmap, refinement and optimal control")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--seed", type=int, help="Random seed (synthetic maps)")
    parser.add_argument("--log-level", default=Config.LOG_LEVEL, type=str.upper, choices=LOG_LEVELS,
                        help="Logging level")
    # the same flags after the subcommand; SUPPRESS keeps a value given before it
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="Random seed (synthetic maps)")
    common.add_argument("--log-level", type=str.upper, choices=LOG_LEVELS, default=argparse.SUPPRESS,
                        help="Logging level")
    sub = parser.add_subparsers(dest="command", required=True)

    plan = sub.add_parser("plan", parents=[common], help="Plan one trajectory")
    plan_map = plan.add_mutually_exclusive_group(required=True)
    plan_map.add_argument("--map", help="Map file (.txt or polygon JSON)")
    plan_map.add_argument("--synthetic", choices=list(SCENARIOS), help="Plan on a synthetic map built from --seed")
    plan.add_argument("--start", help="Start pose X,Y,PSI (use --start=-1,2,0 for negatives)")
    plan.add_argument("--goal", help="Goal pose X,Y[,PSI]")
    plan.add_argument("--method", choices=Config.METHODS, help="Roadmap method")
    plan.add_argument("--delta-d", dest="delta_d", type=float, help="Roadmap spacing in meters")
    plan.add_argument("--refinement", choices=Config.REFINEMENTS, help="Step 2 variant")
    plan.add_argument("--n-intervals", dest="n_intervals", type=int, help="Shooting intervals N")
    plan.add_argument("--t-max", dest="t_max", type=float, help="Final time in seconds")
    plan.add_argument("--cruise-speed", dest="cruise_speed", type=float, help="Warm-start speed in m/s")
    plan.add_argument("--config", help="JSON file with PlannerConfig fields")
    plan.add_argument("--preset", choices=list(Config.PIPELINE_PRESETS.keys()), help="Pipeline preset to run")
    plan.add_argument("--out", help="Output directory (overrides config)")
    plan.set_defaults(func=plan_command)

    bench = sub.add_parser("bench", parents=[common], help="Compare planner configurations")
    bench_map = bench.add_mutually_exclusive_group(required=True)
    bench_map.add_argument("--map", help="Map file")
    bench_map.add_argument("--synthetic", choices=list(SCENARIOS), help="Benchmark on a synthetic map built from --seed")
    bench.add_argument("--configs", help=f"Benchmark config file (default: {Config.BENCH_CONFIGS})")
    bench.add_argument("--out", help="Output directory")
    bench.add_argument("--start", help="Override the start pose X,Y,PSI")
    bench.add_argument("--goal", help="Override the goal pose X,Y,PSI")
    bench.add_argument("--workers", type=int, help="Parallel worker processes")
    bench.set_defaults(func=bench_command)

    synth = sub.add_parser("synth", parents=[common], help="Write a seeded synthetic map")
    synth.add_argument("--kind", choices=list(SCENARIOS), default="archipelago")
    synth.add_argument("--output", required=True, help="Map file to write")
    synth.set_defaults(func=synth_command)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out_dir = Path(getattr(args, 'out', None) or Config.OUTPUT_DIR)
    dual = None
    original_stdout = sys.stdout
    if args.command in ("plan", "bench"):
        out_dir.mkdir(parents=True, exist_ok=True)
        dual = DualLogger(out_dir / Config.LOG_FILE_NAME)
        sys.stdout = dual
    handler = logging.StreamHandler(sys.stdout)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    handler.setLevel(args.log_level)
    root = logging.getLogger()
    root.addHandler(handler)
    root.setLevel(args.log_level)
    try:
        return args.func(args)
    except InputError as e:
        print(f"❌ Input error: {e}")
        return EXIT_INPUT_ERROR
    except OSError as e:
        print(f"❌ I/O error: {e}")
        return EXIT_INPUT_ERROR
    except PlannerError as e:
        print(f"❌ Planner failure: {e}")
        return EXIT_PLANNER_FAILURE
    finally:
        root.removeHandler(handler)
        if dual is not None:
            sys.stdout = original_stdout
            dual.close()


if __name__ == "__main__":
    sys.exit(main())

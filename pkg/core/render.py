"""SVG figures and the artifact bundle of one run."""
import logging
from pathlib import Path
from typing import Dict, Optional, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.collections import LineCollection  # noqa: E402
from matplotlib.patches import Circle  # noqa: E402
from matplotlib.patches import Polygon as PolygonPatch  # noqa: E402

import numpy as np  # noqa: E402

from core.geom import PolygonMap  # noqa: E402
from core.refine import TimedTrajectory  # noqa: E402
from core.report import RunReport, save_report, write_trajectory_csv  # noqa: E402

logger = logging.getLogger(__name__)

# fixed ids keep repeated renders identical
matplotlib.rcParams["svg.hashsalt"] = "asv-planner"

ARTIFACT_NAMES = {
    "trajectory": "trajectory.csv",
    "report": "report.json",
    "scene": "scene.svg",
    "states": "states.svg",
}


def render_scene(map_: PolygonMap, path: Union[str, Path], traj: Optional[TimedTrajectory] = None,
                 artifacts=None, title: Optional[str] = None) -> Path:
    """Map, roadmap, A* path, refined path and the final trajectory."""
    path = Path(path)
    b = map_.bounds
    aspect = b.height / b.width
    fig, ax = plt.subplots(figsize=(8, max(2.0, 8 * aspect)))
    for i, poly in enumerate(map_.obstacles):
        patch = PolygonPatch(poly.array, closed=True, facecolor="#c8b88a", edgecolor="#5a4a2a", linewidth=0.8)
        patch.set_gid(f"obstacle-{i}")
        ax.add_patch(patch)

    if artifacts is not None:
        graph = artifacts.graph
        if graph is not None and graph.edge_count:
            segs = graph.nodes[graph.edges]
            ax.add_collection(LineCollection(segs, colors="#9db7d5", linewidths=0.4, label="roadmap"))
        for circle in artifacts.circles:
            ax.add_patch(Circle((circle.cx, circle.cy), circle.radius, fill=False, linestyle=":",
                                edgecolor="#888888", linewidth=0.5))
        if artifacts.raw_path is not None:
            raw = artifacts.raw_path.array
            ax.plot(raw[:, 0], raw[:, 1], color="#d62728", linewidth=1.0, label="A* path")
        if artifacts.refined_path is not None:
            ref = artifacts.refined_path.array
            ax.plot(ref[:, 0], ref[:, 1], "--", color="#2ca02c", linewidth=1.0, label="refined path")

    if traj is not None:
        ax.plot(traj.eta[:, 0], traj.eta[:, 1], color="#1f1f7a", linewidth=1.6, label="trajectory")
        ax.scatter(traj.eta[[0, -1], 0], traj.eta[[0, -1], 1], color="k", s=12, zorder=5)

    ax.set_xlim(b.xmin, b.xmax)
    ax.set_ylim(b.ymin, b.ymax)
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    if title:
        ax.set_title(title)
    if ax.get_legend_handles_labels()[0]:
        ax.legend(loc="best", fontsize="small")
    fig.tight_layout()
    _save(fig, path)
    return path


def render_states(traj: TimedTrajectory, path: Union[str, Path]) -> Path:
    """Heading and body velocities against time."""
    path = Path(path)
    fig, axes = plt.subplots(4, 1, figsize=(8, 8), sharex=True)
    series = (
        (np.degrees(traj.eta[:, 2]), "psi [deg]"),
        (traj.nu[:, 0], "u [m/s]"),
        (traj.nu[:, 1], "v [m/s]"),
        (np.degrees(traj.nu[:, 2]), "r [deg/s]"),
    )
    for ax, (values, label) in zip(axes, series):
        ax.plot(traj.t, values, linewidth=1.2)
        ax.set_ylabel(label)
        ax.grid(True, linewidth=0.3)
    axes[-1].set_xlabel("t [s]")
    fig.tight_layout()
    _save(fig, path)
    return path


def _save(fig, path: Path):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, format="svg", metadata={"Date": None})
    except OSError as e:
        raise OSError(f"Cannot write {path}: {e}") from e
    finally:
        plt.close(fig)


def emit_artifacts(traj: TimedTrajectory, report: RunReport, map_: PolygonMap, out_dir: Union[str, Path],
                   artifacts=None) -> Dict[str, Path]:
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"Cannot create output directory {out_dir}: {e}") from e
    paths = {key: out_dir / name for key, name in ARTIFACT_NAMES.items()}
    try:
        write_trajectory_csv(traj, paths["trajectory"])
        save_report(report, paths["report"])
    except OSError as e:
        raise OSError(f"Cannot write artifacts under {out_dir}: {e}") from e
    render_scene(map_, paths["scene"], traj, artifacts, title=f"{report.method} / {report.status}")
    render_states(traj, paths["states"])
    logger.info("✅ Artifacts written to: %s", out_dir)
    logger.debug("Wrote %s", ", ".join(str(p) for p in paths.values()))
    return paths

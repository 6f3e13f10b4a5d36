"""Seeded synthetic archipelagos used as reproducible benchmark maps.

The two central islands leave a straight channel on the line from start to
goal. The gap is measured between the islands' enclosing circles, so it is
also open for the circle-covered obstacle constraints of the OCP.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy.spatial import ConvexHull

from core.errors import ParameterError
from core.geom import Bounds, Point2, Polygon, PolygonMap

logger = logging.getLogger(__name__)

RADIAL_JITTER = 0.05
VERTICES_PER_ISLAND = 12


@dataclass(frozen=True)
class Scenario:
    map: PolygonMap
    start: Tuple[float, float, float]
    goal: Tuple[float, float, float]
    name: str = "scenario"


def convex_island(center, radius: float, rng: np.random.Generator, n_vertices: int = VERTICES_PER_ISLAND) -> Polygon:
    """Convex polygon within ``radius * (1 + RADIAL_JITTER)`` of ``center``."""
    ang = 2.0 * np.pi * np.arange(n_vertices) / n_vertices + rng.uniform(-0.15, 0.15, n_vertices)
    rad = radius * (1.0 + rng.uniform(-RADIAL_JITTER, RADIAL_JITTER, n_vertices))
    pts = np.column_stack([center[0] + rad * np.cos(ang), center[1] + rad * np.sin(ang)])
    hull = ConvexHull(pts)
    return Polygon(tuple(Point2(float(x), float(y)) for x, y in pts[hull.vertices]))


def archipelago(seed: int = 0, n_islands: int = 6, channel_width: float = 200.0,
                size: Tuple[float, float] = (5000.0, 4500.0), central_radius: float = 600.0,
                max_tries: int = 5000) -> Scenario:
    """Start and goal sit on the horizontal mid-line; the central pair
    straddles it with ``channel_width`` between their enclosing circles."""
    if n_islands < 2:
        raise ParameterError("An archipelago needs at least the 2 channel islands")
    if channel_width <= 0:
        raise ParameterError("channel_width must be > 0")
    width, height = size
    bounds = Bounds(0.0, 0.0, width, height)
    rng = np.random.default_rng(seed)
    mid_x, mid_y = width / 2.0, height / 2.0
    start = (0.06 * width, mid_y, 0.0)
    goal = (0.94 * width, mid_y, 0.0)

    outer = central_radius * (1.0 + RADIAL_JITTER)
    offset = channel_width / 2.0 + outer
    islands = [convex_island((mid_x, mid_y + offset), central_radius, rng),
               convex_island((mid_x, mid_y - offset), central_radius, rng)]
    circles: List[Tuple[float, float, float]] = [(mid_x, mid_y + offset, outer), (mid_x, mid_y - offset, outer)]

    tries = 0
    while len(islands) < n_islands:
        tries += 1
        if tries > max_tries:
            logger.warning("Placed only %d of %d islands", len(islands), n_islands)
            break
        r = float(rng.uniform(250.0, 450.0))
        reach = r * (1.0 + RADIAL_JITTER)
        cx = float(rng.uniform(reach + 100.0, width - reach - 100.0))
        cy = float(rng.uniform(reach + 100.0, height - reach - 100.0))
        # keep the corridor in front of the channel open
        if abs(cy - mid_y) < reach + 300.0:
            continue
        if any(math.hypot(cx - p[0], cy - p[1]) < reach + 400.0 for p in (start, goal)):
            continue
        if any(math.hypot(cx - c[0], cy - c[1]) < reach + c[2] + 150.0 for c in circles):
            continue
        islands.append(convex_island((cx, cy), r, rng))
        circles.append((cx, cy, reach))

    map_ = PolygonMap(bounds, tuple(islands), 0.0)
    logger.info("Synthetic archipelago (seed %d): %d islands, channel %.0f m", seed, len(islands), channel_width)
    return Scenario(map_, start, goal, f"archipelago-{seed}")


def two_islands(channel_width: float = 200.0, size: Tuple[float, float] = (5000.0, 4500.0),
                seed: int = 0) -> Scenario:
    scenario = archipelago(seed, n_islands=2, channel_width=channel_width, size=size)
    return Scenario(scenario.map, scenario.start, scenario.goal, "two-islands")


def narrow_channel(channel_width: float = 60.0, size: Tuple[float, float] = (2000.0, 1200.0),
                   wall_gap: Optional[float] = None, channel_center: Optional[float] = None) -> Scenario:
    """Two rectangular walls with a short gap of ``channel_width``; the walls
    stop ``wall_gap`` short of the map edge, so a longer way around exists.
    The default channel centre sits between the lines of a 100 m grid."""
    width, height = size
    mid_x = width / 2.0
    mid_y = channel_center if channel_center is not None else height / 2.0 + 50.0
    half = channel_width / 2.0
    thick = 100.0
    margin = wall_gap if wall_gap is not None else 150.0
    upper = Polygon((Point2(mid_x - thick, mid_y + half), Point2(mid_x + thick, mid_y + half),
                     Point2(mid_x + thick, height - margin), Point2(mid_x - thick, height - margin)))
    lower = Polygon((Point2(mid_x - thick, margin), Point2(mid_x + thick, margin),
                     Point2(mid_x + thick, mid_y - half), Point2(mid_x - thick, mid_y - half)))
    map_ = PolygonMap(Bounds(0.0, 0.0, width, height), (upper, lower), 0.0)
    return Scenario(map_, (0.1 * width, mid_y, 0.0), (0.9 * width, mid_y, 0.0), "narrow-channel")


SCENARIOS = {
    'archipelago': lambda seed: archipelago(seed=seed),
    'two-islands': lambda seed: two_islands(seed=seed),
    'narrow-channel': lambda seed: narrow_channel(),
}


def make_scenario(kind: str, seed: int = 0) -> Scenario:
    if kind not in SCENARIOS:
        raise ParameterError(f"Unknown scenario '{kind}', choose from {sorted(SCENARIOS)}")
    return SCENARIOS[kind](int(seed))

"""Map file ingestion.

Line-oriented text format::

    # comment
    bounds xmin ymin xmax ymax
    margin 5.0            (optional safety margin, meters)
    obstacle [label]
    v x y
    v x y
    v x y

A repeated consecutive vertex (including a closing vertex equal to the first)
is collapsed with a warning. ``load_polygon_json`` reads the same content from
a polygon-list JSON file or a GeoJSON FeatureCollection of Polygons.
"""
import json
import logging
import math
from pathlib import Path
from typing import List, Optional, Tuple, Union

from core.errors import InputError, MapParseError
from core.geom import Bounds, Point2, Polygon, PolygonMap

logger = logging.getLogger(__name__)


class MapParser:
    def __init__(self, strict: bool = False):
        # strict: reject duplicate vertices instead of collapsing them
        self.strict = strict
        self.warnings: List[str] = []

    def parse(self, path: Union[str, Path]) -> PolygonMap:
        path = Path(path)
        if not path.exists():
            raise MapParseError(path, 0, "map file not found")
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            raise MapParseError(path, 0, f"cannot read map file: {e}") from e
        return self.parse_text(text, path)

    def parse_text(self, text: str, path: Union[str, Path] = "<string>") -> PolygonMap:
        self.warnings = []
        bounds: Optional[Bounds] = None
        margin = 0.0
        # (header line, [(line, Point2)])
        obstacles: List[Tuple[int, List[Tuple[int, Point2]]]] = []

        for line_no, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            keyword, *args = line.split()
            keyword = keyword.lower()
            if keyword == "bounds":
                if bounds is not None:
                    raise MapParseError(path, line_no, "bounds given twice")
                vals = self._numbers(args, 4, path, line_no, "bounds")
                try:
                    bounds = Bounds(*vals)
                except InputError as e:
                    raise MapParseError(path, line_no, str(e)) from e
            elif keyword == "margin":
                (margin,) = self._numbers(args, 1, path, line_no, "margin")
                if margin < 0:
                    raise MapParseError(path, line_no, "margin must be >= 0")
            elif keyword == "obstacle":
                obstacles.append((line_no, []))
            elif keyword == "v":
                if not obstacles:
                    raise MapParseError(path, line_no, "vertex before any 'obstacle' line")
                x, y = self._numbers(args, 2, path, line_no, "vertex")
                obstacles[-1][1].append((line_no, Point2(x, y)))
            else:
                raise MapParseError(path, line_no, f"unknown keyword '{keyword}'")

        if bounds is None:
            raise MapParseError(path, 0, "missing 'bounds' line")

        polygons = []
        for index, (header, verts) in enumerate(obstacles):
            verts = self._collapse(verts, index, path)
            if len(verts) < 3:
                raise MapParseError(path, header, f"obstacle {index} has {len(verts)} distinct vertices, needs 3")
            for vi, (line_no, p) in enumerate(verts):
                if not bounds.contains(p):
                    raise MapParseError(path, line_no,
                                        f"obstacle {index} vertex {vi} ({p.x}, {p.y}) lies outside the bounds")
            try:
                polygons.append(Polygon(tuple(p for _, p in verts)))
            except InputError as e:
                raise MapParseError(path, header, f"obstacle {index}: {e}") from e
        try:
            map_ = PolygonMap(bounds, tuple(polygons), margin)
        except InputError as e:
            raise MapParseError(path, 0, str(e)) from e
        logger.info("Loaded map %s: %d obstacle(s), bounds %.0f x %.0f m",
                    path, len(polygons), bounds.width, bounds.height)
        return map_

    @staticmethod
    def _numbers(args, count, path, line_no, what) -> Tuple[float, ...]:
        if len(args) != count:
            raise MapParseError(path, line_no, f"{what} expects {count} number(s), got {len(args)}")
        try:
            vals = tuple(float(a) for a in args)
        except ValueError:
            raise MapParseError(path, line_no, f"{what} has a non-numeric value") from None
        if not all(math.isfinite(v) for v in vals):
            raise MapParseError(path, line_no, f"{what} has a non-finite value")
        return vals

    def _collapse(self, verts, index, path):
        out = []
        for line_no, p in verts:
            if out and out[-1][1] == p:
                self._duplicate(path, line_no, index)
                continue
            out.append((line_no, p))
        if len(out) > 1 and out[-1][1] == out[0][1]:
            self._duplicate(path, out[-1][0], index)
            out.pop()
        return out

    def _duplicate(self, path, line_no, index):
        if self.strict:
            raise MapParseError(path, line_no, f"obstacle {index} repeats the previous vertex")
        msg = f"{path}:{line_no}: obstacle {index} repeats a vertex; collapsed"
        self.warnings.append(msg)
        logger.warning(msg)


def load_map(path: Union[str, Path]) -> PolygonMap:
    path = Path(path)
    if path.suffix.lower() in (".json", ".geojson"):
        return load_polygon_json(path)
    return MapParser().parse(path)


def load_polygon_json(path: Union[str, Path]) -> PolygonMap:
    """Read ``{"bounds": [...], "obstacles": [[[x, y], ...], ...], "margin": m}``
    or a GeoJSON FeatureCollection (exterior rings only; bounds from a
    ``bounds`` member or the data extent)."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise MapParseError(path, getattr(e, "lineno", 0), f"cannot read polygon JSON: {e}") from e
    if data.get("type") == "FeatureCollection":
        rings = []
        for feat in data.get("features", []):
            geom = feat.get("geometry") or {}
            if geom.get("type") == "Polygon":
                rings.append(geom["coordinates"][0])
            elif geom.get("type") == "MultiPolygon":
                rings.extend(poly[0] for poly in geom["coordinates"])
        bounds = data.get("bounds")
        if bounds is None:
            xs = [p[0] for r in rings for p in r]
            ys = [p[1] for r in rings for p in r]
            if not xs:
                raise MapParseError(path, 0, "no polygons and no bounds")
            pad = 0.05 * max(max(xs) - min(xs), max(ys) - min(ys), 1.0)
            bounds = [min(xs) - pad, min(ys) - pad, max(xs) + pad, max(ys) + pad]
    else:
        rings = data.get("obstacles", [])
        bounds = data.get("bounds")
        if bounds is None:
            raise MapParseError(path, 0, "missing 'bounds'")
    lines = ["bounds " + " ".join(repr(float(b)) for b in bounds)]
    margin = data.get("margin", data.get("safety_margin"))
    if margin is not None:
        lines.append(f"margin {float(margin)!r}")
    for ring in rings:
        lines.append("obstacle")
        lines.extend(f"v {float(p[0])!r} {float(p[1])!r}" for p in ring)
    return MapParser().parse_text("\n".join(lines), path)


def _num(v) -> str:
    return repr(float(v))


def format_map(map_: PolygonMap) -> str:
    b = map_.bounds
    lines = ["bounds " + " ".join(_num(v) for v in (b.xmin, b.ymin, b.xmax, b.ymax))]
    if map_.safety_margin:
        lines.append(f"margin {_num(map_.safety_margin)}")
    for i, poly in enumerate(map_.obstacles):
        lines.append(f"obstacle {i}")
        lines.extend(f"v {_num(p.x)} {_num(p.y)}" for p in poly.vertices)
    return "\n".join(lines) + "\n"


def write_map(map_: PolygonMap, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_map(map_), encoding="utf-8")
    return path

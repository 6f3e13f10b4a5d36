"""Step 1: discretise the map and search it.

Two discretisations are available: the uniform 8-connected grid of the
original pipeline and a Voronoi roadmap whose generators sit on obstacle
boundaries and the map edge. Both produce a ``RoadmapGraph`` that ``astar``
searches after ``attach_endpoints`` has joined the start and goal.
"""
import heapq
import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import QhullError, Voronoi, cKDTree

from core.errors import (DegenerateInputError, MalformedInputError, NoPathError,
                         OutOfBoundsError, ParameterError, UnreachableEndpointError)
from core.geom import (EPS, Bounds, Point2, PolygonMap, as_point, boundary_samples,
                       points_array, points_clear, segments_clear)

logger = logging.getLogger(__name__)

ATTACH_RADIUS_FACTOR = 3.0
DUPLICATE_JITTER_FACTOR = 1e-7


class GraphKind(str, Enum):
    UNIFORM_GRID = "uniform-grid"
    VORONOI = "voronoi"


@dataclass(frozen=True, eq=False)
class RoadmapGraph:
    """Undirected graph; each edge is stored once and traversed both ways."""
    nodes: np.ndarray
    edges: np.ndarray
    lengths: np.ndarray
    kind: GraphKind
    delta_d: float
    endpoints: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float).reshape(-1, 2)
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        lengths = np.asarray(self.lengths, dtype=float).reshape(-1)
        if len(lengths) != len(edges):
            raise MalformedInputError("One length per edge is required")
        if len(edges) and (edges.min() < 0 or edges.max() >= len(nodes)):
            raise MalformedInputError("Edge references a node index out of range")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise MalformedInputError("Self-loop edges are not allowed")
        if len(edges):
            true_len = np.hypot(*(nodes[edges[:, 1]] - nodes[edges[:, 0]]).T)
            if np.any(np.abs(true_len - lengths) > 1e-9):
                raise MalformedInputError("Edge length differs from the Euclidean node distance")
        for arr in (nodes, edges, lengths):
            arr.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "kind", GraphKind(self.kind))

    @classmethod
    def from_edges(cls, nodes, edges, kind, delta_d, endpoints=None) -> "RoadmapGraph":
        nodes = np.asarray(nodes, dtype=float).reshape(-1, 2)
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if len(edges):
            edges = np.unique(np.sort(edges, axis=1), axis=0)
        lengths = np.hypot(*(nodes[edges[:, 1]] - nodes[edges[:, 0]]).T) if len(edges) else np.zeros(0)
        return cls(nodes, edges, lengths, kind, float(delta_d), endpoints)

    @property
    def node_count(self) -> int:
        return len(self.nodes)

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    @property
    def is_empty(self) -> bool:
        return self.node_count == 0

    def point(self, i: int) -> Point2:
        return Point2(float(self.nodes[i, 0]), float(self.nodes[i, 1]))

    @cached_property
    def adjacency(self) -> Tuple[List[int], List[int], List[float]]:
        """CSR-style (indptr, neighbours, weights) as Python lists."""
        n = self.node_count
        rows = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
        cols = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
        w = np.concatenate([self.lengths, self.lengths])
        order = np.lexsort((cols, rows))
        rows, cols, w = rows[order], cols[order], w[order]
        indptr = np.searchsorted(rows, np.arange(n + 1))
        return indptr.tolist(), cols.tolist(), w.tolist()

    def csgraph(self) -> csr_matrix:
        n = self.node_count
        rows = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
        cols = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
        w = np.concatenate([self.lengths, self.lengths])
        return csr_matrix((w, (rows, cols)), shape=(n, n))


@dataclass(frozen=True)
class PiecewiseLinearPath:
    waypoints: Tuple[Point2, ...]

    def __post_init__(self):
        pts = tuple(as_point(p) for p in self.waypoints)
        if len(pts) < 2:
            raise MalformedInputError(f"A path needs at least 2 waypoints, got {len(pts)}")
        for i in range(len(pts) - 1):
            if math.hypot(pts[i + 1].x - pts[i].x, pts[i + 1].y - pts[i].y) <= EPS:
                raise MalformedInputError(f"Waypoints {i} and {i + 1} coincide")
        object.__setattr__(self, "waypoints", pts)

    def __len__(self):
        return len(self.waypoints)

    @cached_property
    def array(self) -> np.ndarray:
        arr = np.array(self.waypoints, dtype=float)
        arr.setflags(write=False)
        return arr

    @property
    def length(self) -> float:
        return float(np.hypot(*np.diff(self.array, axis=0).T).sum())

    def is_collision_free(self, map_: PolygonMap) -> bool:
        a = self.array
        if not map_.bounds.contains_array(a).all():
            return False
        return bool(segments_clear(a[:-1], a[1:], map_).all())


@dataclass(frozen=True)
class VoronoiDiagram:
    vertices: np.ndarray
    edges: np.ndarray
    interior: np.ndarray  # True for Qhull vertices, False for points created by clipping


@dataclass(frozen=True)
class SearchResult:
    path: PiecewiseLinearPath
    node_indices: Tuple[int, ...]
    length: float
    explored: int


def _check_spacing(delta_d: float):
    if not (math.isfinite(delta_d) and delta_d > 0):
        raise ParameterError(f"delta_d must be > 0, got {delta_d}")


# ---------------------------------------------------------------------------
# Uniform grid
# ---------------------------------------------------------------------------

def build_uniform_grid(map_: PolygonMap, delta_d: float) -> RoadmapGraph:
    _check_spacing(delta_d)
    b = map_.bounds
    if delta_d > b.width + EPS or delta_d > b.height + EPS:
        raise ParameterError(
            f"delta_d={delta_d} exceeds the map size {b.width} x {b.height}")
    nx = int(math.floor(b.width / delta_d + 1e-9)) + 1
    ny = int(math.floor(b.height / delta_d + 1e-9)) + 1
    gx, gy = np.meshgrid(b.xmin + delta_d * np.arange(nx), b.ymin + delta_d * np.arange(ny), indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    valid = points_clear(pts, map_)

    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    src, dst = [], []
    for di, dj in ((1, 0), (0, 1), (1, 1), (1, -1)):
        i2, j2 = ii + di, jj + dj
        inside = (i2 < nx) & (j2 >= 0) & (j2 < ny)
        src.append(ii[inside] * ny + jj[inside])
        dst.append(i2[inside] * ny + j2[inside])
    src = np.concatenate(src)
    dst = np.concatenate(dst)
    keep = valid[src] & valid[dst]
    src, dst = src[keep], dst[keep]
    clear = segments_clear(pts[src], pts[dst], map_)
    src, dst = src[clear], dst[clear]

    new_index = np.cumsum(valid) - 1
    nodes = pts[valid]
    edges = np.column_stack([new_index[src], new_index[dst]]) if len(src) else np.zeros((0, 2), dtype=np.int64)
    if len(nodes) == 0:
        logger.warning("Uniform grid with delta_d=%.3g has no collision-free nodes", delta_d)
    graph = RoadmapGraph.from_edges(nodes, edges, GraphKind.UNIFORM_GRID, delta_d)
    logger.info("Uniform grid: %d nodes, %d edges (delta_d=%.3g m)", graph.node_count, graph.edge_count, delta_d)
    return graph


# ---------------------------------------------------------------------------
# Voronoi roadmap
# ---------------------------------------------------------------------------

def _clip_segment(a: np.ndarray, b: np.ndarray, bounds: Bounds):
    """Liang-Barsky clip. Returns (a', b', a_moved, b_moved) or None."""
    d = b - a
    t0, t1 = 0.0, 1.0
    for p, q in ((-d[0], a[0] - bounds.xmin), (d[0], bounds.xmax - a[0]),
                 (-d[1], a[1] - bounds.ymin), (d[1], bounds.ymax - a[1])):
        if p == 0.0:
            if q < 0.0:
                return None
            continue
        r = q / p
        if p < 0.0:
            t0 = max(t0, r)
        else:
            t1 = min(t1, r)
        if t0 > t1:
            return None
    return a + t0 * d, a + t1 * d, t0 > 0.0, t1 < 1.0


def _merge_close(points: np.ndarray, tol: float):
    """Merge points closer than ``tol``. Returns (representatives, inverse)."""
    if len(points) == 0:
        return points, np.zeros(0, dtype=np.int64)
    pairs = cKDTree(points).query_pairs(tol, output_type="ndarray")
    n = len(points)
    if len(pairs) == 0:
        return points, np.arange(n)
    link = csr_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(link, directed=False)
    # label order follows the first member, so representatives keep input order
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    relabel = np.empty_like(order)
    relabel[order] = np.arange(len(order))
    return points[first[order]], relabel[labels]


def _separate_duplicates(pts: np.ndarray, jitter: float) -> np.ndarray:
    _, first, inverse = np.unique(pts, axis=0, return_index=True, return_inverse=True)
    dup = np.ones(len(pts), dtype=bool)
    dup[first] = False
    if not dup.any():
        return pts
    if jitter <= 0.0:
        return pts[np.sort(first)]
    rng = np.random.default_rng(0)
    offsets = rng.uniform(-1.0, 1.0, size=pts.shape) * jitter
    out = pts.copy()
    out[dup] += offsets[dup]
    return out


def voronoi_of_points(generators: Sequence, bounds: Bounds, jitter: float = 0.0) -> VoronoiDiagram:
    """Voronoi vertices and finite edges clipped to ``bounds``.

    Unbounded rays are cut where they leave the rectangle and the cut points
    become vertices. Duplicate generators are dropped, or nudged by a
    deterministic offset of size ``jitter`` when it is positive.
    """
    pts = points_array(generators)
    if len(pts) < 3:
        raise DegenerateInputError(f"Voronoi needs at least 3 generators, got {len(pts)}")
    if not np.isfinite(pts).all():
        raise DegenerateInputError("Non-finite generator coordinates")
    if not bounds.contains_array(pts).all():
        raise OutOfBoundsError("Every Voronoi generator must lie inside the bounds")
    pts = _separate_duplicates(pts, jitter)
    if len(pts) < 3:
        raise DegenerateInputError("Fewer than 3 distinct generators")
    sv = np.linalg.svd(pts - pts.mean(axis=0), compute_uv=False)
    if sv[1] <= 1e-12 * max(sv[0], 1.0):
        raise DegenerateInputError("Voronoi generators are collinear")
    try:
        vor = Voronoi(pts)
    except QhullError as e:
        raise DegenerateInputError(f"Qhull rejected the generators: {e}") from e

    diag = math.hypot(bounds.width, bounds.height)
    center = pts.mean(axis=0)
    coords: List[np.ndarray] = []
    interior: List[bool] = []
    from_qhull = {}

    def qhull_vertex(i):
        if i not in from_qhull:
            from_qhull[i] = len(coords)
            coords.append(vor.vertices[i])
            interior.append(True)
        return from_qhull[i]

    def cut_vertex(p):
        coords.append(p)
        interior.append(False)
        return len(coords) - 1

    edges = []
    for (p, q), rv in zip(vor.ridge_points, vor.ridge_vertices):
        rv = np.asarray(rv)
        if np.all(rv >= 0):
            ia, ib = int(rv[0]), int(rv[1])
            a, b = vor.vertices[ia], vor.vertices[ib]
        else:
            finite = rv[rv >= 0]
            if finite.size == 0:
                continue
            ia, ib = int(finite[0]), -1
            t = pts[q] - pts[p]
            t /= np.linalg.norm(t)
            n = np.array([-t[1], t[0]])
            side = np.sign(np.dot(pts[[p, q]].mean(axis=0) - center, n))
            direction = (side if side != 0 else 1.0) * n
            a = vor.vertices[ia]
            b = a + direction * (2.0 * diag + np.linalg.norm(a - center))
        clipped = _clip_segment(a, b, bounds)
        if clipped is None:
            continue
        ca, cb, moved_a, moved_b = clipped
        if np.hypot(*(cb - ca)) <= EPS:
            continue
        va = cut_vertex(ca) if moved_a else qhull_vertex(ia)
        vb = cut_vertex(cb) if (moved_b or ib < 0) else qhull_vertex(ib)
        edges.append((va, vb))

    verts = np.array(coords, dtype=float).reshape(-1, 2)
    merged, inverse = _merge_close(verts, 1e-7 * max(diag, 1.0))
    inner = np.zeros(len(merged), dtype=bool)
    np.logical_or.at(inner, inverse, np.array(interior, dtype=bool))
    e = inverse[np.array(edges, dtype=np.int64).reshape(-1, 2)] if edges else np.zeros((0, 2), dtype=np.int64)
    e = e[e[:, 0] != e[:, 1]]
    if len(e):
        e = np.unique(np.sort(e, axis=1), axis=0)
    return VoronoiDiagram(merged, e, inner)


def voronoi_generators(map_: PolygonMap, delta_d: float) -> List[Point2]:
    gens: List[Point2] = []
    for poly in map_.obstacles:
        gens.extend(boundary_samples(poly, delta_d))
    gens.extend(boundary_samples(map_.bounds, delta_d))
    return gens


def build_voronoi_roadmap(map_: PolygonMap, delta_d: float) -> RoadmapGraph:
    _check_spacing(delta_d)
    gens = voronoi_generators(map_, delta_d)
    diag = voronoi_of_points(gens, map_.bounds, jitter=DUPLICATE_JITTER_FACTOR * delta_d)
    valid = points_clear(diag.vertices, map_)
    e = diag.edges
    keep = valid[e[:, 0]] & valid[e[:, 1]] if len(e) else np.zeros(0, dtype=bool)
    e = e[keep]
    if len(e):
        e = e[segments_clear(diag.vertices[e[:, 0]], diag.vertices[e[:, 1]], map_)]
    new_index = np.cumsum(valid) - 1
    graph = RoadmapGraph.from_edges(diag.vertices[valid], new_index[e], GraphKind.VORONOI, delta_d)
    logger.info("Voronoi roadmap: %d generators, %d nodes, %d edges (delta_d=%.3g m)",
                len(gens), graph.node_count, graph.edge_count, delta_d)
    return graph


# ---------------------------------------------------------------------------
# Endpoints and search
# ---------------------------------------------------------------------------

def attach_endpoints(graph: RoadmapGraph, start, goal, map_: PolygonMap) -> RoadmapGraph:
    """Join start and goal to the graph.

    Each endpoint connects to every graph node within 3*delta_d that it sees,
    or to the nearest visible node when none of those is visible. An endpoint
    that coincides with a node reuses it. The returned graph carries the
    indices in ``endpoints``.
    """
    start, goal = as_point(start), as_point(goal)
    if math.hypot(goal.x - start.x, goal.y - start.y) <= EPS:
        raise ParameterError("Start and goal coincide")
    base = graph.nodes
    radius = ATTACH_RADIUS_FACTOR * graph.delta_d
    nodes = [base]
    new_edges = [graph.edges]
    next_index = graph.node_count
    indices = []
    for label, p in (("start", start), ("goal", goal)):
        if not points_clear([p], map_)[0]:
            raise UnreachableEndpointError(f"The {label} point {tuple(p)} collides or lies outside the map")
        d = np.hypot(base[:, 0] - p.x, base[:, 1] - p.y) if len(base) else np.zeros(0)
        same = np.flatnonzero(d <= EPS)
        if same.size:
            indices.append(int(same[0]))
            continue
        cand = np.flatnonzero(d <= radius)
        if cand.size:
            cand = cand[segments_clear(np.repeat([p], cand.size, axis=0), base[cand], map_)]
        if cand.size == 0:
            order = np.argsort(d, kind="stable")
            for chunk in np.array_split(order, max(1, math.ceil(len(order) / 256))):
                if chunk.size == 0:
                    continue
                seen = chunk[segments_clear(np.repeat([p], chunk.size, axis=0), base[chunk], map_)]
                if seen.size:
                    cand = seen[:1]
                    logger.warning("No node within %.1f m of the %s sees it; using the nearest visible node %d",
                                   radius, label, int(cand[0]))
                    break
        if cand.size == 0:
            raise UnreachableEndpointError(f"No collision-free connection from the {label} point {tuple(p)}")
        nodes.append(np.array([[p.x, p.y]]))
        new_edges.append(np.column_stack([np.full(cand.size, next_index), cand]))
        indices.append(next_index)
        next_index += 1
    all_nodes = np.vstack(nodes)
    all_edges = np.vstack(new_edges).astype(np.int64)
    return RoadmapGraph.from_edges(all_nodes, all_edges, graph.kind, graph.delta_d,
                                   endpoints=(indices[0], indices[1]))


def _best_first(graph: RoadmapGraph, start_idx: int, goal_idx: int, use_heuristic: bool) -> SearchResult:
    n = graph.node_count
    for name, idx in (("start", start_idx), ("goal", goal_idx)):
        if not (0 <= idx < n):
            raise ParameterError(f"{name} index {idx} is not a node of a {n}-node graph")
    if start_idx == goal_idx:
        raise ParameterError("Start and goal are the same node")
    indptr, neighbours, weights = graph.adjacency
    if use_heuristic:
        gx, gy = graph.nodes[goal_idx]
        h = np.hypot(graph.nodes[:, 0] - gx, graph.nodes[:, 1] - gy).tolist()
    else:
        h = [0.0] * n
    g = {start_idx: 0.0}
    parent = {start_idx: -1}
    closed = bytearray(n)
    # ties on f go to the smaller h, then the smaller index
    heap = [(h[start_idx], h[start_idx], start_idx)]
    explored = 0
    while heap:
        _, _, u = heapq.heappop(heap)
        if closed[u]:
            continue
        closed[u] = 1
        explored += 1
        if u == goal_idx:
            break
        gu = g[u]
        for k in range(indptr[u], indptr[u + 1]):
            v = neighbours[k]
            if closed[v]:
                continue
            ng = gu + weights[k]
            if ng < g.get(v, math.inf):
                g[v] = ng
                parent[v] = u
                heapq.heappush(heap, (ng + h[v], h[v], v))
    else:
        raise NoPathError(start_idx, goal_idx, explored)

    chain = [goal_idx]
    while chain[-1] != start_idx:
        chain.append(parent[chain[-1]])
    chain.reverse()
    path = PiecewiseLinearPath(tuple(graph.point(i) for i in chain))
    return SearchResult(path, tuple(chain), g[goal_idx], explored)


def astar(graph: RoadmapGraph, start_idx: int, goal_idx: int) -> SearchResult:
    """A* with the straight-line distance to the goal as heuristic."""
    result = _best_first(graph, start_idx, goal_idx, use_heuristic=True)
    logger.info("A*: length %.1f m, %d waypoints, %d nodes explored",
                result.length, len(result.path), result.explored)
    return result


def dijkstra(graph: RoadmapGraph, start_idx: int, goal_idx: int) -> SearchResult:
    return _best_first(graph, start_idx, goal_idx, use_heuristic=False)

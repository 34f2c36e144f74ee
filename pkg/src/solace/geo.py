"""Physical environment: buildings, roads, safe areas, soil zones.

Coordinates are planar meters. The road network is an undirected graph whose
edges can be blocked by debris between ticks; everything else is immutable
after :func:`load_environment`.
"""

from __future__ import annotations

import copy
import heapq
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy.spatial import cKDTree
from shapely import STRtree
from shapely.geometry import LineString, Point, Polygon
from shapely.ops import nearest_points

SNAP_TOLERANCE = 0.5
GRID_CELL_SIZE = 25.0

OBJECT_KINDS = ("building", "safe_area", "soil_zone", "road_node", "road_edge")


class GeoError(ValueError):
    """Malformed or inconsistent environment input."""


class LoadError(GeoError):
    def __init__(self, path, feature_id, message):
        self.path = str(path)
        self.feature_id = feature_id
        where = self.path if feature_id is None else f"{self.path}: feature {feature_id!r}"
        super().__init__(f"{where}: {message}")


class ValidationError(GeoError):
    pass


class Point2D(NamedTuple):
    x: float
    y: float


def id_key(value):
    """Sort key that orders numeric ids numerically and everything else after."""
    if isinstance(value, (int, np.integer)):
        return (0, int(value), "")
    s = str(value)
    try:
        return (0, int(s), "")
    except ValueError:
        return (1, 0, s)


def _ring(points) -> list[Point2D]:
    ring = [Point2D(float(p[0]), float(p[1])) for p in points]
    if len(ring) > 1 and ring[0] == ring[-1]:
        ring = ring[:-1]
    return ring


@dataclass(eq=False)
class BuildingFootprint:
    id: object
    polygon: list[Point2D]
    height: float
    typology: str = "masonry"
    vulnerability_class: str = ""
    damage_probabilities: dict[int, float] = field(default_factory=dict)
    use: str = "home"

    def __post_init__(self):
        self.shape = Polygon(self.polygon)

    @property
    def centroid(self) -> Point2D:
        c = self.shape.centroid
        return Point2D(c.x, c.y)


@dataclass(eq=False)
class SoilZone:
    id: object
    polygon: list[Point2D]
    intensity_modifier: int = 0

    def __post_init__(self):
        self.shape = Polygon(self.polygon)


@dataclass(eq=False)
class SafeArea:
    id: object
    polygon: list[Point2D]

    def __post_init__(self):
        self.shape = Polygon(self.polygon)


class Edge(NamedTuple):
    id: int
    a: int
    b: int
    length: float
    width: float


@dataclass(eq=False)
class RoadGraph:
    nodes: list[Point2D]
    edges: list[Edge]
    blocked: set[int] = field(default_factory=set)

    def __post_init__(self):
        self.adjacency: list[list[tuple[int, int]]] = [[] for _ in self.nodes]
        for e in self.edges:
            self.adjacency[e.a].append((e.b, e.id))
            self.adjacency[e.b].append((e.a, e.id))
        self.version = 0

    def components(self, respect_blocking=False) -> list[list[int]]:
        """Connected components as sorted node lists, largest first."""
        seen = [False] * len(self.nodes)
        comps = []
        for start in range(len(self.nodes)):
            if seen[start]:
                continue
            seen[start] = True
            stack, comp = [start], []
            while stack:
                u = stack.pop()
                comp.append(u)
                for v, eid in self.adjacency[u]:
                    if respect_blocking and eid in self.blocked:
                        continue
                    if not seen[v]:
                        seen[v] = True
                        stack.append(v)
            comps.append(sorted(comp))
        comps.sort(key=lambda c: (-len(c), c[0]))
        return comps

    def validate_connected(self):
        comps = self.components()
        if len(comps) > 1:
            listing = "; ".join(
                f"[{', '.join(map(str, c[:8]))}{', ...' if len(c) > 8 else ''}]" for c in comps
            )
            raise ValidationError(f"road graph has {len(comps)} disconnected components: {listing}")

    def edge_line(self, eid: int) -> LineString:
        e = self.edges[eid]
        return LineString([self.nodes[e.a], self.nodes[e.b]])

    def block(self, edge_ids: Iterable[int]):
        new = set(edge_ids) - self.blocked
        if new:
            self.blocked |= new
            self.version += 1
        return new


def build_road_graph(segments: Sequence, snap_tolerance: float = SNAP_TOLERANCE) -> RoadGraph:
    """Build a graph from polylines given as ``(points, width)`` pairs.

    Every polyline vertex becomes a node; vertices closer than
    ``snap_tolerance`` to an existing node are merged into it.
    """
    nodes: list[Point2D] = []
    buckets: dict[tuple[int, int], list[int]] = {}
    cell = max(snap_tolerance, 1e-9)

    def snap(p) -> int:
        x, y = float(p[0]), float(p[1])
        cx, cy = math.floor(x / cell), math.floor(y / cell)
        best, best_d = None, None
        for i in range(cx - 1, cx + 2):
            for j in range(cy - 1, cy + 2):
                for n in buckets.get((i, j), ()):
                    d = math.hypot(nodes[n].x - x, nodes[n].y - y)
                    if d <= snap_tolerance and (best_d is None or d < best_d or (d == best_d and n < best)):
                        best, best_d = n, d
        if best is not None:
            return best
        nodes.append(Point2D(x, y))
        buckets.setdefault((cx, cy), []).append(len(nodes) - 1)
        return len(nodes) - 1

    edges: list[Edge] = []
    for index, seg in enumerate(segments):
        points, width = seg
        if len(points) < 2:
            raise GeoError(f"road segment {index} has fewer than 2 points")
        ids = [snap(p) for p in points]
        for a, b in zip(ids, ids[1:]):
            if a == b:
                raise GeoError(f"road segment {index} has a zero-length piece after snapping")
            na, nb = nodes[a], nodes[b]
            edges.append(Edge(len(edges), a, b, math.hypot(na.x - nb.x, na.y - nb.y), float(width)))
    return RoadGraph(nodes, edges)


class GridIndex:
    """Uniform grid over object bounding boxes; exact disc tests on lookup."""

    def __init__(self, cell_size: float = GRID_CELL_SIZE):
        if cell_size <= 0:
            raise ValueError("cell size must be positive")
        self.cell_size = cell_size
        self._cells: dict[tuple[str, int, int], list] = {}
        self._geoms: dict[tuple[str, object], object] = {}

    def _span(self, minx, miny, maxx, maxy):
        c = self.cell_size
        return (math.floor(minx / c), math.floor(miny / c), math.floor(maxx / c), math.floor(maxy / c))

    def insert(self, kind: str, oid, geom):
        self._geoms[(kind, oid)] = geom
        i0, j0, i1, j1 = self._span(*geom.bounds)
        for i in range(i0, i1 + 1):
            for j in range(j0, j1 + 1):
                self._cells.setdefault((kind, i, j), []).append(oid)

    def query(self, kind: str, center, radius: float) -> list:
        x, y = center
        i0, j0, i1, j1 = self._span(x - radius, y - radius, x + radius, y + radius)
        n_cells = (i1 - i0 + 1) * (j1 - j0 + 1)
        candidates = set()
        if n_cells > len(self._geoms):
            candidates = {oid for (k, oid) in self._geoms if k == kind}
        else:
            for i in range(i0, i1 + 1):
                for j in range(j0, j1 + 1):
                    candidates.update(self._cells.get((kind, i, j), ()))
        pt = Point(x, y)
        hits = [oid for oid in candidates if self._geoms[(kind, oid)].distance(pt) <= radius]
        return sorted(hits, key=id_key)


@dataclass(eq=False)
class Environment:
    buildings: list[BuildingFootprint]
    soil_zones: list[SoilZone]
    safe_areas: list[SafeArea]
    road_graph: RoadGraph
    cell_size: float = GRID_CELL_SIZE
    snap_tolerance: float = SNAP_TOLERANCE

    def __post_init__(self):
        self.buildings = sorted(self.buildings, key=lambda b: id_key(b.id))
        self.safe_areas = sorted(self.safe_areas, key=lambda a: id_key(a.id))
        self.soil_zones = sorted(self.soil_zones, key=lambda z: id_key(z.id))
        self.building_by_id = {b.id: b for b in self.buildings}
        self.safe_area_by_id = {a.id: a for a in self.safe_areas}

        shapes = [b.shape for b in self.buildings] + [a.shape for a in self.safe_areas]
        shapes += [z.shape for z in self.soil_zones]
        g = self.road_graph
        xs = [p.x for p in g.nodes] + [s.bounds[0] for s in shapes] + [s.bounds[2] for s in shapes]
        ys = [p.y for p in g.nodes] + [s.bounds[1] for s in shapes] + [s.bounds[3] for s in shapes]
        self.bbox = (min(xs), min(ys), max(xs), max(ys))

        self.spatial_index = GridIndex(self.cell_size)
        for b in self.buildings:
            self.spatial_index.insert("building", b.id, b.shape)
        for a in self.safe_areas:
            self.spatial_index.insert("safe_area", a.id, a.shape)
        for z in self.soil_zones:
            self.spatial_index.insert("soil_zone", z.id, z.shape)
        for n, p in enumerate(g.nodes):
            self.spatial_index.insert("road_node", n, Point(p))
        for e in g.edges:
            self.spatial_index.insert("road_edge", e.id, g.edge_line(e.id))

        self._node_tree = cKDTree(np.array(g.nodes, dtype=float).reshape(-1, 2))
        self._edge_tree = STRtree([g.edge_line(e.id) for e in g.edges])
        self._target_area = self._find_target_nodes()
        self._routing_cache: tuple[int, dict] | None = None

    def _find_target_nodes(self) -> dict[int, object]:
        """Map node -> smallest id of a safe area the node touches."""
        targets: dict[int, object] = {}
        for area in self.safe_areas:
            minx, miny, maxx, maxy = area.shape.bounds
            r = math.hypot(maxx - minx, maxy - miny) / 2 + self.snap_tolerance
            c = ((minx + maxx) / 2, (miny + maxy) / 2)
            for n in self.spatial_index.query("road_node", c, r):
                if area.shape.distance(Point(self.road_graph.nodes[n])) <= self.snap_tolerance:
                    if n not in targets or id_key(area.id) < id_key(targets[n]):
                        targets[n] = area.id
        return targets

    def fork(self) -> "Environment":
        """Copy sharing all geometry but with a private blocked-edge set."""
        clone = copy.copy(self)
        g = copy.copy(self.road_graph)
        g.blocked = set(self.road_graph.blocked)
        clone.road_graph = g
        clone._routing_cache = None
        return clone

    @property
    def target_nodes(self) -> dict[int, object]:
        return dict(self._target_area)

    def inside_bbox(self, p) -> bool:
        x0, y0, x1, y1 = self.bbox
        return x0 <= p[0] <= x1 and y0 <= p[1] <= y1

    def safe_area_at(self, p):
        """Id of the smallest-id safe area containing ``p``, else None."""
        for aid in self.spatial_index.query("safe_area", p, 0.0):
            return aid
        return None

    def building_at(self, p):
        for bid in self.spatial_index.query("building", p, 0.0):
            return bid
        return None

    def nearest_node(self, p) -> int:
        k = min(2, len(self.road_graph.nodes))
        d, idx = self._node_tree.query([p[0], p[1]], k=k)
        d, idx = np.atleast_1d(d), np.atleast_1d(idx)
        if k == 2 and d[0] == d[1]:
            return int(min(idx))
        return int(idx[0])

    def edges_near(self, geom) -> list[int]:
        return sorted(int(i) for i in self._edge_tree.query(geom))

    def entry_point(self, area_id, node: int) -> Point2D:
        """A point inside safe area ``area_id`` close to road node ``node``."""
        shape = self.safe_area_by_id[area_id].shape
        p = Point(self.road_graph.nodes[node])
        if shape.contains(p):
            return Point2D(p.x, p.y)
        q = nearest_points(shape, p)[0]
        inner = shape.representative_point()
        # walk from the boundary toward an interior point until strictly inside
        for frac in (0.01, 0.02, 0.05, 0.1, 0.25, 0.5, 1.0):
            cand = Point(q.x + (inner.x - q.x) * frac, q.y + (inner.y - q.y) * frac)
            if shape.contains(cand):
                return Point2D(cand.x, cand.y)
        return Point2D(inner.x, inner.y)


def neighbors_within(env: Environment, center, radius: float, kind: str) -> list:
    """Ids of ``kind`` objects whose geometry intersects the disc, ascending."""
    if radius < 0:
        raise ValueError("radius must be non-negative")
    if kind not in OBJECT_KINDS:
        raise ValueError(f"unknown object kind {kind!r}")
    return env.spatial_index.query(kind, center, radius)


# --- routing ---------------------------------------------------------------


@dataclass
class Route:
    edges: list[int]
    length: float
    safe_area: object
    nodes: list[int]


class Unreachable:
    def __repr__(self):
        return "unreachable"

    def __bool__(self):
        return False


UNREACHABLE = Unreachable()


def _routing_labels(env: Environment) -> dict[int, tuple]:
    """Reverse multi-source Dijkstra from safe-area nodes over unblocked edges.

    Labels are ``(length, area key, edge sequence toward the area)``; the
    lexicographic label order gives the documented tie-breaks.
    """
    g = env.road_graph
    cached = env._routing_cache
    if cached is not None and cached[0] == g.version:
        return cached[1]
    best: dict[int, tuple] = {}
    heap = []
    for n, aid in env._target_area.items():
        lab = (0.0, id_key(aid), ())
        best[n] = lab + (aid,)
        heapq.heappush(heap, (lab, n, aid))
    done = set()
    while heap:
        lab, u, aid = heapq.heappop(heap)
        if u in done or best[u][:3] != lab:
            continue
        done.add(u)
        dist, akey, seq = lab
        for v, eid in g.adjacency[u]:
            if eid in g.blocked or v in done:
                continue
            cand = (dist + g.edges[eid].length, akey, (eid,) + seq)
            if v not in best or cand < best[v][:3]:
                best[v] = cand + (aid,)
                heapq.heappush(heap, (cand, v, aid))
    env._routing_cache = (g.version, best)
    return best


def route_from_node(env: Environment, node: int):
    label = _routing_labels(env).get(node)
    if label is None:
        return UNREACHABLE
    dist, _, seq, aid = label
    g = env.road_graph
    nodes = [node]
    for eid in seq:
        e = g.edges[eid]
        nodes.append(e.b if nodes[-1] == e.a else e.a)
    return Route(list(seq), dist, aid, nodes)


def route_to_nearest_safe_area(env: Environment, origin):
    """Shortest unblocked route from the node nearest ``origin`` to a safe area.

    An origin already inside a safe area gets an empty route of length 0.
    """
    aid = env.safe_area_at(origin)
    if aid is not None:
        return Route([], 0.0, aid, [])
    return route_from_node(env, env.nearest_node(origin))


def shortest_path(env: Environment, source: int, target: int):
    """Plain point-to-point Dijkstra over unblocked edges; node list or None."""
    g = env.road_graph
    dist = {source: 0.0}
    prev: dict[int, int] = {}
    heap = [(0.0, source)]
    while heap:
        d, u = heapq.heappop(heap)
        if u == target:
            break
        if d > dist[u]:
            continue
        for v, eid in g.adjacency[u]:
            if eid in g.blocked:
                continue
            nd = d + g.edges[eid].length
            if nd < dist.get(v, math.inf):
                dist[v] = nd
                prev[v] = u
                heapq.heappush(heap, (nd, v))
    if target not in dist:
        return None
    path = [target]
    while path[-1] != source:
        path.append(prev[path[-1]])
    return path[::-1]


# --- debris blocking -------------------------------------------------------


def _free_width_blocked(line: LineString, width: float, debris_shape, threshold: float, step: float = 1.0) -> bool:
    """True when debris leaves less than ``threshold`` meters of clear width
    across the street at some sampled cross-section."""
    (x0, y0), (x1, y1) = line.coords
    length = line.length
    ux, uy = (x1 - x0) / length, (y1 - y0) / length
    nx_, ny_ = -uy, ux
    half = width / 2.0
    n = max(2, int(math.ceil(length / step)) + 1)
    for t in np.linspace(0.0, length, n):
        cx, cy = x0 + ux * t, y0 + uy * t
        cut = LineString([(cx - nx_ * half, cy - ny_ * half), (cx + nx_ * half, cy + ny_ * half)])
        if not cut.intersects(debris_shape):
            continue
        free = cut.difference(debris_shape)
        parts = getattr(free, "geoms", [free])
        widest = max((p.length for p in parts if not p.is_empty), default=0.0)
        if widest < threshold:
            return True
    return False


def apply_debris_blocking(env: Environment, debris, width_aware: bool = False, passability: float = 1.0) -> set[int]:
    """Block every edge obstructed by a debris zone and return the blocked set.

    By default an edge is blocked when a debris polygon touches its
    centerline. With ``width_aware`` the edge is blocked when the clear width
    left at any cross-section drops below ``passability`` meters.
    """
    g = env.road_graph
    hit = set()
    for zone in debris:
        shape = zone.shape
        for eid in env.edges_near(shape):
            if eid in hit or eid in g.blocked:
                continue
            line = g.edge_line(eid)
            if width_aware:
                if _free_width_blocked(line, g.edges[eid].width, shape, passability):
                    hit.add(eid)
            elif line.intersects(shape):
                hit.add(eid)
    g.block(hit)
    return set(g.blocked)


# --- loading ---------------------------------------------------------------


def _read_features(path) -> list[dict]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise LoadError(path, None, f"cannot read GeoJSON: {exc}") from exc
    if doc.get("type") != "FeatureCollection":
        raise LoadError(path, None, "not a FeatureCollection")
    crs = json.dumps(doc.get("crs", "")).upper()
    if "4326" in crs or "CRS84" in crs:
        raise LoadError(path, None, "geographic CRS; coordinates must be projected meters")
    return doc.get("features", [])


def _feature_id(feat, index):
    fid = feat.get("id", feat.get("properties", {}).get("id"))
    return index if fid is None else fid


def _polygon(path, fid, geometry) -> list[Point2D]:
    if not geometry or geometry.get("type") != "Polygon":
        raise LoadError(path, fid, "expected a Polygon geometry")
    coords = geometry.get("coordinates") or [[]]
    ring = _ring(coords[0])
    if len(set(ring)) < 3:
        raise LoadError(path, fid, f"polygon needs at least 3 distinct vertices, got {len(set(ring))}")
    if not all(math.isfinite(c) for p in ring for c in p):
        raise LoadError(path, fid, "non-finite coordinate")
    shape = Polygon(ring)
    if not shape.is_valid or shape.area <= 0:
        raise LoadError(path, fid, "polygon is self-intersecting or degenerate")
    return ring


def _damage_table(path, fid, raw) -> dict[int, float]:
    table = {}
    for key, value in (raw or {}).items():
        try:
            level, p = int(key), float(value)
        except (TypeError, ValueError):
            raise LoadError(path, fid, f"bad damage probability entry {key!r}: {value!r}") from None
        if not 0.0 <= p <= 1.0:
            raise LoadError(path, fid, f"damage probability {p} outside [0, 1]")
        table[level] = p
    levels = sorted(table)
    for lo, hi in zip(levels, levels[1:]):
        if table[hi] < table[lo]:
            raise LoadError(path, fid, "damage probabilities must be non-decreasing in intensity")
    return table


def _looks_geographic(points) -> bool:
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    if not xs:
        return False
    in_range = all(-180 <= x <= 180 for x in xs) and all(-90 <= y <= 90 for y in ys)
    return in_range and (max(xs) - min(xs)) < 1.0 and (max(ys) - min(ys)) < 1.0


def load_buildings(path) -> list[BuildingFootprint]:
    out = []
    for i, feat in enumerate(_read_features(path)):
        fid = _feature_id(feat, i)
        props = feat.get("properties") or {}
        ring = _polygon(path, fid, feat.get("geometry"))
        try:
            height = float(props.get("height", 0))
        except (TypeError, ValueError):
            height = 0.0
        if not height > 0:
            raise LoadError(path, fid, "height must be a positive number of meters")
        out.append(
            BuildingFootprint(
                id=fid,
                polygon=ring,
                height=height,
                typology=str(props.get("typology", "masonry")),
                vulnerability_class=str(props.get("vulnerability_class", "")),
                damage_probabilities=_damage_table(path, fid, props.get("damage_probabilities")),
                use=str(props.get("use", "home")),
            )
        )
    return out


def load_safe_areas(path) -> list[SafeArea]:
    return [
        SafeArea(_feature_id(f, i), _polygon(path, _feature_id(f, i), f.get("geometry")))
        for i, f in enumerate(_read_features(path))
    ]


def load_soil(path) -> list[SoilZone]:
    out = []
    for i, feat in enumerate(_read_features(path)):
        fid = _feature_id(feat, i)
        mod = (feat.get("properties") or {}).get("intensity_modifier", 0)
        if mod not in (-1, 0, 1) or isinstance(mod, bool):
            raise LoadError(path, fid, f"intensity_modifier must be -1, 0 or +1, got {mod!r}")
        out.append(SoilZone(fid, _polygon(path, fid, feat.get("geometry")), int(mod)))
    return out


def load_road_segments(path) -> list[tuple[list, float]]:
    segments = []
    for i, feat in enumerate(_read_features(path)):
        fid = _feature_id(feat, i)
        geom = feat.get("geometry") or {}
        if geom.get("type") != "LineString":
            raise LoadError(path, fid, "expected a LineString geometry")
        pts = geom.get("coordinates") or []
        if len(pts) < 2:
            raise LoadError(path, fid, "road needs at least 2 points")
        width = float((feat.get("properties") or {}).get("width", 6.0))
        if width <= 0:
            raise LoadError(path, fid, "road width must be positive")
        segments.append(([(float(x), float(y)) for x, y, *_ in pts], width))
    return segments


def validate_environment(env: Environment):
    for area in env.safe_areas:
        for b in env.buildings:
            if area.shape.intersection(b.shape).area > 1e-9:
                raise ValidationError(f"safe area {area.id!r} overlaps building {b.id!r}")
    zones = env.soil_zones
    for i, a in enumerate(zones):
        for b in zones[i + 1:]:
            if a.shape.intersection(b.shape).area > 1e-9:
                raise ValidationError(f"soil zones {a.id!r} and {b.id!r} overlap")
    env.road_graph.validate_connected()
    if not env.safe_areas:
        raise ValidationError("environment has no safe area")
    if not env._target_area:
        raise ValidationError("no road node touches a safe area")


def load_environment(building_file, road_file, safe_area_file, soil_file=None,
                     cell_size: float = GRID_CELL_SIZE, snap_tolerance: float = SNAP_TOLERANCE) -> Environment:
    buildings = load_buildings(building_file)
    segments = load_road_segments(road_file)
    safe_areas = load_safe_areas(safe_area_file)
    soil = load_soil(soil_file) if soil_file else []

    pts = [p for b in buildings for p in b.polygon] + [p for s, _ in segments for p in s]
    pts += [p for a in safe_areas for p in a.polygon]
    if _looks_geographic(pts):
        raise GeoError("coordinates look like longitude/latitude; a projected meter CRS is required")
    try:
        graph = build_road_graph(segments, snap_tolerance)
    except GeoError as exc:
        raise LoadError(road_file, None, str(exc)) from exc
    env = Environment(buildings, soil, safe_areas, graph, cell_size=cell_size, snap_tolerance=snap_tolerance)
    validate_environment(env)
    return env

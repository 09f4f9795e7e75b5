"""Static road-world model: roads, junctions, parked obstacles, target.

The map is a rectilinear road network.  Every road segment is axis-aligned
("EW" runs along x, "NS" along y) and joins two junctions; roads are stored
with endpoint `a` at the lower axis coordinate, so the along-road coordinate
`s` runs from `a` (s = 0) to `b` (s = length).  Traffic is right-hand: a
vehicle travelling in lane direction +1 (increasing axis coordinate) keeps
to the right of the road centreline.

A WorldMap is immutable after construction and safe to share across
concurrent simulation runs; every operation here is a pure query.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import math
from dataclasses import dataclass

from .geometry import OrientedBox, Rect, boxes_intersect, norm_heading

EW = "EW"
NS = "NS"

DEFAULT_BOUNDS = Rect(0.0, 0.0, 500.0, 500.0)
DEFAULT_ROAD_WIDTH = 6.0
DEFAULT_MIN_SEPARATION = 40.0
CAR_LENGTH = 4.0
CAR_WIDTH = 2.0

MAP_FORMAT = "sitcov-map/1"


class OffRoadPoint(ValueError):
    """Raised when a path query is given a point not on any road surface."""


@dataclass(frozen=True)
class Point:
    x: float
    y: float


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    heading: float  # radians, 0 = east, CCW positive, normalised [0, 2*pi)

    def __post_init__(self):
        object.__setattr__(self, "heading", norm_heading(self.heading))


@dataclass(frozen=True)
class Junction:
    id: int
    x: float
    y: float
    degree: int


@dataclass(frozen=True)
class RoadSegment:
    id: int
    a: int  # junction id at the lower axis coordinate
    b: int  # junction id at the higher axis coordinate
    axis: str  # EW or NS
    width: float


@dataclass(frozen=True)
class ParkedObstacle:
    id: int
    cx: float
    cy: float
    heading: float
    length: float
    width: float
    road_id: int
    lane_dir: int  # +1 travelling a->b, -1 travelling b->a

    def box(self) -> OrientedBox:
        return OrientedBox(self.cx, self.cy, self.heading, self.length, self.width)


@dataclass(frozen=True)
class WorldMap:
    bounds: Rect
    junctions: tuple[Junction, ...]
    roads: tuple[RoadSegment, ...]
    parked: tuple[ParkedObstacle, ...]
    target: Point
    ego_start: Pose
    moving_car_count: int
    external_seed: int

    def junction(self, jid: int) -> Junction:
        return _junction_index(self)[jid]

    def road(self, rid: int) -> RoadSegment:
        return _road_index(self)[rid]

    def incident_roads(self, jid: int) -> list[RoadSegment]:
        return [r for r in self.roads if r.a == jid or r.b == jid]

    def dead_ends(self) -> list[Junction]:
        return [j for j in self.junctions if j.degree == 1]


# Index caches keyed by map identity; WorldMap is immutable so this is safe.
_INDEX_CACHE: dict[int, tuple] = {}


def _indices(m: WorldMap):
    key = id(m)
    hit = _INDEX_CACHE.get(key)
    if hit is None or hit[0] is not m:
        hit = (m, {j.id: j for j in m.junctions}, {r.id: r for r in m.roads})
        if len(_INDEX_CACHE) > 256:
            _INDEX_CACHE.clear()
        _INDEX_CACHE[key] = hit
    return hit


def _junction_index(m: WorldMap) -> dict[int, Junction]:
    return _indices(m)[1]


def _road_index(m: WorldMap) -> dict[int, RoadSegment]:
    return _indices(m)[2]


# ---------------------------------------------------------------------------
# Road geometry queries


def road_endpoints(m: WorldMap, road: RoadSegment) -> tuple[Junction, Junction]:
    return m.junction(road.a), m.junction(road.b)


def road_length(m: WorldMap, road: RoadSegment) -> float:
    ja, jb = road_endpoints(m, road)
    if road.axis == EW:
        return jb.x - ja.x
    return jb.y - ja.y


def core_rect(m: WorldMap, road: RoadSegment) -> Rect:
    """Road surface between junction centres, without end extensions."""
    ja, jb = road_endpoints(m, road)
    h = 0.5 * road.width
    if road.axis == EW:
        return Rect(ja.x, ja.y - h, jb.x, ja.y + h)
    return Rect(ja.x - h, ja.y, ja.x + h, jb.y)


def surface_rect(m: WorldMap, road: RoadSegment) -> Rect:
    """Full driveable rectangle: the core plus a half-width end cap at each
    junction, so junction areas and dead-end turnarounds count as road."""
    ja, jb = road_endpoints(m, road)
    h = 0.5 * road.width
    if road.axis == EW:
        return Rect(ja.x - h, ja.y - h, jb.x + h, ja.y + h)
    return Rect(ja.x - h, ja.y - h, ja.x + h, jb.y + h)


def lane_cross_offset(road: RoadSegment, lane_dir: int) -> float:
    """Signed offset of the lane centreline from the road centreline.

    For EW roads the offset is in y, for NS roads in x.  Right-hand traffic:
    eastbound keeps south of centre, northbound keeps east of centre.
    """
    q = 0.25 * road.width
    if road.axis == EW:
        return -lane_dir * q
    return lane_dir * q


def lane_heading(road: RoadSegment, lane_dir: int) -> float:
    if road.axis == EW:
        return 0.0 if lane_dir > 0 else math.pi
    return 0.5 * math.pi if lane_dir > 0 else 1.5 * math.pi


def lane_point(m: WorldMap, road: RoadSegment, lane_dir: int, s: float) -> tuple[float, float]:
    """World position of the lane centreline at along-coordinate s (from a)."""
    ja, _ = road_endpoints(m, road)
    off = lane_cross_offset(road, lane_dir)
    if road.axis == EW:
        return ja.x + s, ja.y + off
    return ja.x + off, ja.y + s


def along_coord(m: WorldMap, road: RoadSegment, x: float, y: float) -> float:
    """Along-road coordinate of a point, clamped to [0, length]."""
    ja, _ = road_endpoints(m, road)
    s = (x - ja.x) if road.axis == EW else (y - ja.y)
    return min(max(s, 0.0), road_length(m, road))


def cross_coord(m: WorldMap, road: RoadSegment, x: float, y: float) -> float:
    """Signed offset of a point from the road centreline (EW: y, NS: x)."""
    ja, _ = road_endpoints(m, road)
    return (y - ja.y) if road.axis == EW else (x - ja.x)


def on_road(m: WorldMap, p: Point) -> bool:
    """True iff p lies on some road surface, junction areas included."""
    return any(surface_rect(m, r).contains(p.x, p.y) for r in m.roads)


def containing_roads(m: WorldMap, x: float, y: float) -> list[RoadSegment]:
    return [r for r in m.roads if surface_rect(m, r).contains(x, y)]


def road_of_point(m: WorldMap, x: float, y: float) -> RoadSegment | None:
    """Containing road with the smallest centreline offset; ties go to the
    lowest road id so the assignment is deterministic."""
    best = None
    best_key = None
    for r in containing_roads(m, x, y):
        key = (abs(cross_coord(m, r, x, y)), r.id)
        if best_key is None or key < best_key:
            best, best_key = r, key
    return best


def in_junction_zone(m: WorldMap, x: float, y: float, radius: float | None = None) -> bool:
    """True within `radius` (default: one road width) of a junction centre."""
    for j in m.junctions:
        r = radius
        if r is None:
            incident = m.incident_roads(j.id)
            r = max((rd.width for rd in incident), default=DEFAULT_ROAD_WIDTH)
        if math.hypot(x - j.x, y - j.y) <= r:
            return True
    return False


# ---------------------------------------------------------------------------
# Shortest paths


def _adjacency(m: WorldMap) -> dict[int, list[tuple[int, float]]]:
    adj: dict[int, list[tuple[int, float]]] = {j.id: [] for j in m.junctions}
    for r in m.roads:
        length = road_length(m, r)
        adj[r.a].append((r.b, length))
        adj[r.b].append((r.a, length))
    return adj


def _dijkstra(m: WorldMap, sources: dict[int, float]) -> dict[int, float]:
    dist = dict(sources)
    heap = [(d, j) for j, d in sources.items()]
    heapq.heapify(heap)
    adj = _adjacency(m)
    while heap:
        d, j = heapq.heappop(heap)
        if d > dist.get(j, math.inf):
            continue
        for k, w in adj[j]:
            nd = d + w
            if nd < dist.get(k, math.inf):
                dist[k] = nd
                heapq.heappush(heap, (nd, k))
    return dist


def network_shortest_path(m: WorldMap, a: Point, b: Point) -> float:
    """Length of the shortest along-road path between two on-road points.

    Both points are projected onto the centrelines of their containing
    roads.  Raises OffRoadPoint when either point is off every road surface.
    """
    roads_a = containing_roads(m, a.x, a.y)
    roads_b = containing_roads(m, b.x, b.y)
    if not roads_a:
        raise OffRoadPoint(f"point ({a.x}, {a.y}) is not on any road")
    if not roads_b:
        raise OffRoadPoint(f"point ({b.x}, {b.y}) is not on any road")

    best = math.inf
    shared = {r.id for r in roads_a} & {r.id for r in roads_b}
    for rid in shared:
        r = m.road(rid)
        best = min(best, abs(along_coord(m, r, a.x, a.y) - along_coord(m, r, b.x, b.y)))

    sources: dict[int, float] = {}
    for r in roads_a:
        s = along_coord(m, r, a.x, a.y)
        for jid, d in ((r.a, s), (r.b, road_length(m, r) - s)):
            if d < sources.get(jid, math.inf):
                sources[jid] = d
    dist = _dijkstra(m, sources)
    for r in roads_b:
        s = along_coord(m, r, b.x, b.y)
        for jid, d in ((r.a, s), (r.b, road_length(m, r) - s)):
            if jid in dist:
                best = min(best, dist[jid] + d)
    return best


# ---------------------------------------------------------------------------
# Validation


def _ego_box(m: WorldMap) -> OrientedBox:
    return OrientedBox(m.ego_start.x, m.ego_start.y, m.ego_start.heading, CAR_LENGTH, CAR_WIDTH)


def validate_map(m: WorldMap, min_separation: float = DEFAULT_MIN_SEPARATION) -> list[str]:
    """Check every structural invariant; returns one entry per violation.

    Violations are data, not failures — an empty list means the map is valid.
    """
    v: list[str] = []
    jidx = {j.id: j for j in m.junctions}

    if len(jidx) != len(m.junctions):
        v.append("duplicate junction ids")
    if len({r.id for r in m.roads}) != len(m.roads):
        v.append("duplicate road ids")

    for j in m.junctions:
        if not (math.isfinite(j.x) and math.isfinite(j.y)):
            v.append(f"junction {j.id}: non-finite position")
        if not m.bounds.contains(j.x, j.y):
            v.append(f"junction {j.id}: outside map bounds")
        if j.degree not in (1, 2, 3):
            v.append(f"junction {j.id}: degree {j.degree} not in {{1, 2, 3}}")
        incident = len(m.incident_roads(j.id))
        if incident != j.degree:
            v.append(f"junction {j.id}: degree field {j.degree} != {incident} incident roads")

    js = list(m.junctions)
    for i in range(len(js)):
        for k in range(i + 1, len(js)):
            d = math.hypot(js[i].x - js[k].x, js[i].y - js[k].y)
            if d < min_separation - 1e-9:
                v.append(
                    f"junction separation: {js[i].id} and {js[k].id} are "
                    f"{d:.1f} m apart (min {min_separation:.1f})"
                )

    for r in m.roads:
        if r.a == r.b:
            v.append(f"road {r.id}: endpoints identical")
            continue
        if r.a not in jidx or r.b not in jidx:
            v.append(f"road {r.id}: unknown junction endpoint")
            continue
        ja, jb = jidx[r.a], jidx[r.b]
        if r.axis == EW:
            if ja.y != jb.y:
                v.append(f"road {r.id}: EW endpoints not aligned in y")
            if not jb.x > ja.x:
                v.append(f"road {r.id}: endpoints not ordered along axis")
        elif r.axis == NS:
            if ja.x != jb.x:
                v.append(f"road {r.id}: NS endpoints not aligned in x")
            if not jb.y > ja.y:
                v.append(f"road {r.id}: endpoints not ordered along axis")
        else:
            v.append(f"road {r.id}: unknown axis {r.axis!r}")
            continue
        if road_length(m, r) < min_separation - 1e-9:
            v.append(f"road {r.id}: shorter than minimum junction separation")
        if not m.bounds.contains_rect(surface_rect(m, r)):
            v.append(f"road {r.id}: surface extends beyond map bounds")

    # connectivity over the junction graph
    if m.junctions:
        if not m.roads:
            v.append("connectivity: map has no roads")
        else:
            seen = {m.roads[0].a}
            stack = [m.roads[0].a]
            adj = _adjacency(m)
            while stack:
                j = stack.pop()
                for k, _ in adj.get(j, []):
                    if k not in seen:
                        seen.add(k)
                        stack.append(k)
            if len(seen) != len(m.junctions):
                v.append("connectivity: road graph is not connected")
    else:
        v.append("connectivity: map has no junctions")

    ridx = {r.id: r for r in m.roads}
    for p in m.parked:
        if p.road_id not in ridx:
            v.append(f"parked {p.id}: unknown road {p.road_id}")
            continue
        rect = core_rect(m, ridx[p.road_id])
        box = p.box().aabb()
        if not rect.contains_rect(box):
            v.append(f"parked {p.id}: footprint not fully on its road segment")
    for i in range(len(m.parked)):
        for k in range(i + 1, len(m.parked)):
            if boxes_intersect(m.parked[i].box(), m.parked[k].box()):
                v.append(f"obstacle overlap: parked {m.parked[i].id} and {m.parked[k].id}")

    if not on_road(m, m.target):
        v.append("placement: target is not on a road surface")
    if not on_road(m, Point(m.ego_start.x, m.ego_start.y)):
        v.append("placement: ego start is not on a road surface")
    else:
        ego = _ego_box(m)
        for p in m.parked:
            if boxes_intersect(ego, p.box()):
                v.append(f"placement: ego start overlaps parked obstacle {p.id}")

    if m.moving_car_count < 0:
        v.append("moving_car_count: negative")
    return v


# ---------------------------------------------------------------------------
# Map file format (stable key order, bit-exact round trip)


def map_to_dict(m: WorldMap) -> dict:
    return {
        "format": MAP_FORMAT,
        "bounds": [m.bounds.xmin, m.bounds.ymin, m.bounds.xmax, m.bounds.ymax],
        "external_seed": m.external_seed,
        "moving_car_count": m.moving_car_count,
        "target": [m.target.x, m.target.y],
        "ego_start": {"x": m.ego_start.x, "y": m.ego_start.y, "heading": m.ego_start.heading},
        "junctions": [
            {"id": j.id, "x": j.x, "y": j.y, "degree": j.degree}
            for j in sorted(m.junctions, key=lambda j: j.id)
        ],
        "roads": [
            {"id": r.id, "a": r.a, "b": r.b, "axis": r.axis, "width": r.width}
            for r in sorted(m.roads, key=lambda r: r.id)
        ],
        "parked": [
            {
                "id": p.id,
                "x": p.cx,
                "y": p.cy,
                "heading": p.heading,
                "length": p.length,
                "width": p.width,
                "road": p.road_id,
                "lane": p.lane_dir,
            }
            for p in sorted(m.parked, key=lambda p: p.id)
        ],
    }


def map_from_dict(d: dict) -> WorldMap:
    if d.get("format") != MAP_FORMAT:
        raise ValueError(f"unsupported map format: {d.get('format')!r}")
    return WorldMap(
        bounds=Rect(*d["bounds"]),
        junctions=tuple(
            Junction(j["id"], j["x"], j["y"], j["degree"])
            for j in sorted(d["junctions"], key=lambda j: j["id"])
        ),
        roads=tuple(
            RoadSegment(r["id"], r["a"], r["b"], r["axis"], r["width"])
            for r in sorted(d["roads"], key=lambda r: r["id"])
        ),
        parked=tuple(
            ParkedObstacle(
                p["id"], p["x"], p["y"], p["heading"], p["length"], p["width"],
                p["road"], p["lane"],
            )
            for p in sorted(d["parked"], key=lambda p: p["id"])
        ),
        target=Point(*d["target"]),
        ego_start=Pose(**d["ego_start"]),
        moving_car_count=d["moving_car_count"],
        external_seed=d["external_seed"],
    )


def serialise_map(m: WorldMap) -> str:
    return json.dumps(map_to_dict(m), sort_keys=True, indent=2) + "\n"


def parse_map(text: str) -> WorldMap:
    return map_from_dict(json.loads(text))


def map_digest(m: WorldMap) -> str:
    return hashlib.sha256(serialise_map(m).encode("utf-8")).hexdigest()[:12]

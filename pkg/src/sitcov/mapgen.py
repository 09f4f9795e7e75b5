"""Seeded random generation of valid WorldMaps.

The network is grown on a square lattice whose pitch is the minimum
junction separation: junctions sit on lattice points, roads span one to
four lattice steps, and a road's interior lattice points must be free.
This makes the separation and crossing rules exact by construction while
keeping layouts varied (the lattice origin itself is drawn uniformly).

Draw order from the external seed is fixed: junction count, then network
growth, then parked obstacles, then the moving-car count, then the ego
start, then the target.  Initial moving-car poses are drawn from a
sub-stream derived from the external seed (STREAM_MOVING_INIT) so the
simulator can recreate them from the map file alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, TypeVar

from .geometry import OrientedBox, Rect, boxes_intersect, point_box_distance
from .rng import STREAM_MOVING_INIT, SeededRng, derive_seed
from .world import (
    CAR_LENGTH,
    CAR_WIDTH,
    DEFAULT_BOUNDS,
    DEFAULT_MIN_SEPARATION,
    DEFAULT_ROAD_WIDTH,
    EW,
    NS,
    Junction,
    ParkedObstacle,
    Point,
    Pose,
    RoadSegment,
    WorldMap,
    core_rect,
    lane_heading,
    lane_point,
    road_length,
)

T = TypeVar("T")


class GenerationFailed(RuntimeError):
    """No valid map could be produced; only degenerate configs get here."""


@dataclass(frozen=True)
class GenConfig:
    junction_count_range: tuple[int, int] = (4, 9)
    parked_range: tuple[int, int] = (2, 8)
    moving_range: tuple[int, int] = (0, 3)
    placement_attempts: int = 20
    bounds: Rect = DEFAULT_BOUNDS
    road_width: float = DEFAULT_ROAD_WIDTH
    min_separation: float = DEFAULT_MIN_SEPARATION
    car_length: float = CAR_LENGTH
    car_width: float = CAR_WIDTH
    loop_connect_prob: float = 0.3
    edge_inset: float = 10.0

    def validate(self) -> list[str]:
        problems = []
        for name in ("junction_count_range", "parked_range", "moving_range"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                problems.append(f"{name}: invalid range ({lo}, {hi})")
        if self.placement_attempts < 1:
            problems.append("placement_attempts must be >= 1")
        if self.min_separation <= 0 or self.road_width <= 0:
            problems.append("separation and road width must be positive")
        if not (0.0 <= self.loop_connect_prob <= 1.0):
            problems.append("loop_connect_prob must be in [0, 1]")
        return problems


def place_with_retries(
    rng: SeededRng,
    candidate_fn: Callable[[SeededRng], T],
    accept_fn: Callable[[T], bool],
    attempts: int,
) -> T | None:
    """First accepted candidate among at most `attempts` draws, else None.

    Omission (None) is a value, not a failure: the caller decides whether
    the element can be left out.  The number of rng draws consumed is
    deterministic: candidate_fn's own draw count times the number of
    attempts actually made.
    """
    if attempts < 1:
        raise ValueError("attempts must be >= 1")
    for _ in range(attempts):
        candidate = candidate_fn(rng)
        if accept_fn(candidate):
            return candidate
    return None


# ---------------------------------------------------------------------------
# Network growth

_DIRS = ((1, 0), (-1, 0), (0, 1), (0, -1))


@dataclass
class _Growth:
    origin: tuple[float, float]
    pitch: float
    junction_cells: dict[tuple[int, int], int] = field(default_factory=dict)
    interior_cells: set[tuple[int, int]] = field(default_factory=set)
    degrees: dict[int, int] = field(default_factory=dict)
    edges: set[tuple[int, int]] = field(default_factory=set)
    roads: list[tuple[int, int, str]] = field(default_factory=list)  # (jid_a, jid_b, axis)

    def cell_pos(self, cell: tuple[int, int]) -> tuple[float, float]:
        return self.origin[0] + cell[0] * self.pitch, self.origin[1] + cell[1] * self.pitch


def _grow_network(rng: SeededRng, cfg: GenConfig) -> _Growth:
    b = cfg.bounds
    inset = cfg.edge_inset
    lo_x, hi_x = b.xmin + inset, b.xmax - inset
    lo_y, hi_y = b.ymin + inset, b.ymax - inset
    if hi_x <= lo_x or hi_y <= lo_y:
        raise GenerationFailed("bounds too small for any junction")

    n_target = rng.randint(*cfg.junction_count_range)
    x0 = rng.uniform(lo_x, hi_x)
    y0 = rng.uniform(lo_y, hi_y)
    g = _Growth(origin=(x0, y0), pitch=cfg.min_separation)
    g.junction_cells[(0, 0)] = 0
    g.degrees[0] = 0
    cells_by_jid = {0: (0, 0)}

    def in_bounds(cell):
        x, y = g.cell_pos(cell)
        return lo_x <= x <= hi_x and lo_y <= y <= hi_y

    for _ in range(1, max(n_target, 1)):
        for _attempt in range(cfg.placement_attempts):
            open_jids = sorted(j for j, d in g.degrees.items() if d < 3)
            if not open_jids:
                break
            jid = rng.choice(open_jids)
            dx, dy = rng.choice(_DIRS)
            k = rng.randint(1, 4)
            start = cells_by_jid[jid]
            end = (start[0] + dx * k, start[1] + dy * k)
            interior = [(start[0] + dx * i, start[1] + dy * i) for i in range(1, k)]
            if any(c in g.junction_cells or c in g.interior_cells for c in interior):
                continue
            if any(c in g.interior_cells for c in (end,)):
                continue
            if not in_bounds(end):
                continue
            axis = EW if dx != 0 else NS
            if end in g.junction_cells:
                # possible loop closure onto an existing junction
                other = g.junction_cells[end]
                if g.degrees[other] >= 3:
                    continue
                pair = (min(jid, other), max(jid, other))
                if pair in g.edges:
                    continue
                if rng.random() >= cfg.loop_connect_prob:
                    continue
                g.edges.add(pair)
                g.roads.append((jid, other, axis))
                g.degrees[jid] += 1
                g.degrees[other] += 1
            else:
                new_jid = len(cells_by_jid)
                g.junction_cells[end] = new_jid
                cells_by_jid[new_jid] = end
                g.degrees[new_jid] = 1
                g.degrees[jid] += 1
                g.edges.add((min(jid, new_jid), max(jid, new_jid)))
                g.roads.append((jid, new_jid, axis))
            g.interior_cells.update(interior)
            break
        # per-element effort exhausted: the junction is omitted
    if not g.roads:
        raise GenerationFailed("network growth produced no roads")
    return g


def _build_skeleton(g: _Growth, cfg: GenConfig, external_seed: int) -> WorldMap:
    cells_by_jid = {jid: cell for cell, jid in g.junction_cells.items()}
    junctions = tuple(
        Junction(jid, *g.cell_pos(cells_by_jid[jid]), degree=g.degrees[jid])
        for jid in sorted(cells_by_jid)
    )
    jpos = {j.id: (j.x, j.y) for j in junctions}
    roads = []
    for rid, (ja, jb, axis) in enumerate(g.roads):
        pa, pb = jpos[ja], jpos[jb]
        coord = 0 if axis == EW else 1
        if pa[coord] > pb[coord]:
            ja, jb = jb, ja
        roads.append(RoadSegment(rid, ja, jb, axis, cfg.road_width))
    placeholder = Pose(junctions[0].x, junctions[0].y, 0.0)
    return WorldMap(
        bounds=cfg.bounds,
        junctions=junctions,
        roads=tuple(roads),
        parked=(),
        target=Point(junctions[0].x, junctions[0].y),
        ego_start=placeholder,
        moving_car_count=0,
        external_seed=external_seed,
    )


# ---------------------------------------------------------------------------
# Element placement


def _road_lane_pos_candidate(m: WorldMap, cfg: GenConfig, margin: float):
    roads = sorted(m.roads, key=lambda r: r.id)

    def draw(rng: SeededRng):
        road = rng.choice(roads)
        lane_dir = 1 if rng.randint(0, 1) == 1 else -1
        length = road_length(m, road)
        lo, hi = margin, length - margin
        if hi <= lo:
            s = 0.5 * length
            rng.random()  # keep the per-candidate draw count fixed
        else:
            s = rng.uniform(lo, hi)
        return road, lane_dir, s

    return draw


def _place_parked(m: WorldMap, rng: SeededRng, cfg: GenConfig) -> WorldMap:
    count = rng.randint(*cfg.parked_range)
    margin = cfg.road_width + cfg.car_length
    candidate = _road_lane_pos_candidate(m, cfg, margin)
    placed: list[ParkedObstacle] = []

    def accept(c) -> bool:
        road, lane_dir, s = c
        length = road_length(m, road)
        if s < margin or s > length - margin:
            return False
        x, y = lane_point(m, road, lane_dir, s)
        box = OrientedBox(x, y, lane_heading(road, lane_dir), cfg.car_length, cfg.car_width)
        if not core_rect(m, road).contains_rect(box.aabb()):
            return False
        return all(not boxes_intersect(box, p.box()) for p in placed)

    for _ in range(count):
        c = place_with_retries(rng, candidate, accept, cfg.placement_attempts)
        if c is None:
            continue  # omitted: placement effort exhausted
        road, lane_dir, s = c
        x, y = lane_point(m, road, lane_dir, s)
        placed.append(
            ParkedObstacle(
                len(placed), x, y, lane_heading(road, lane_dir),
                cfg.car_length, cfg.car_width, road.id, lane_dir,
            )
        )
    return replace(m, parked=tuple(placed))


def initial_moving_car_poses(m: WorldMap, cfg: GenConfig | None = None) -> list[tuple[int, int, float]]:
    """Starting lanes for the map's moving cars: list of (road_id, lane_dir, s).

    Drawn from the STREAM_MOVING_INIT sub-stream of the external seed, so
    the result is a pure function of the map file contents.  Cars that
    cannot be placed within the permitted attempts are omitted (the traffic
    engine tops the population back up through dead-end respawns).
    """
    cfg = cfg or GenConfig()
    rng = SeededRng(derive_seed(m.external_seed, STREAM_MOVING_INIT))
    margin = cfg.road_width + cfg.car_length
    candidate = _road_lane_pos_candidate(m, cfg, margin)
    placed: list[tuple[int, int, float]] = []
    boxes = [p.box() for p in m.parked]

    blocked_lanes = {(p.road_id, p.lane_dir) for p in m.parked}

    def accept(c) -> bool:
        road, lane_dir, s = c
        if (road.id, lane_dir) in blocked_lanes:
            return False  # the car would queue forever behind the parked one
        length = road_length(m, road)
        if s < margin or s > length - margin:
            return False
        x, y = lane_point(m, road, lane_dir, s)
        box = OrientedBox(x, y, lane_heading(road, lane_dir), cfg.car_length, cfg.car_width)
        grown = OrientedBox(box.cx, box.cy, box.heading, box.length + 4.0, box.width + 1.0)
        return all(not boxes_intersect(grown, b) for b in boxes)

    for _ in range(m.moving_car_count):
        c = place_with_retries(rng, candidate, accept, cfg.placement_attempts)
        if c is None:
            continue
        road, lane_dir, s = c
        x, y = lane_point(m, road, lane_dir, s)
        boxes.append(
            OrientedBox(x, y, lane_heading(road, lane_dir), cfg.car_length, cfg.car_width)
        )
        placed.append((road.id, lane_dir, s))
    return placed


def _place_ego(m: WorldMap, rng: SeededRng, cfg: GenConfig) -> WorldMap:
    margin = cfg.road_width
    candidate = _road_lane_pos_candidate(m, cfg, margin)
    moving = [
        OrientedBox(*lane_point(m, m.road(rid), lane_dir, s),
                    lane_heading(m.road(rid), lane_dir), cfg.car_length, cfg.car_width)
        for rid, lane_dir, s in initial_moving_car_poses(m, cfg)
    ]
    blockers = [p.box() for p in m.parked] + moving

    def pose_for(c) -> Pose:
        road, lane_dir, s = c
        x, y = lane_point(m, road, lane_dir, s)
        return Pose(x, y, lane_heading(road, lane_dir))

    def accept(c) -> bool:
        pose = pose_for(c)
        box = OrientedBox(pose.x, pose.y, pose.heading, cfg.car_length + 2.0, cfg.car_width + 1.0)
        return all(not boxes_intersect(box, b) for b in blockers)

    c = place_with_retries(rng, candidate, accept, cfg.placement_attempts)
    if c is None:
        # deterministic sweep before giving up: the ego cannot be omitted
        for road in sorted(m.roads, key=lambda r: r.id):
            length = road_length(m, road)
            for lane_dir in (1, -1):
                s = margin
                while s <= length - margin:
                    if accept((road, lane_dir, s)):
                        return replace(m, ego_start=pose_for((road, lane_dir, s)))
                    s += cfg.car_length
        raise GenerationFailed("no free ego start position")
    return replace(m, ego_start=pose_for(c))


def _place_target(m: WorldMap, rng: SeededRng, cfg: GenConfig) -> WorldMap:
    roads = sorted(m.roads, key=lambda r: r.id)

    def draw(rng: SeededRng) -> Point:
        road = rng.choice(roads)
        s = rng.uniform(0.0, road_length(m, road))
        ja, _ = m.junction(road.a), m.junction(road.b)
        if road.axis == EW:
            return Point(ja.x + s, ja.y)
        return Point(ja.x, ja.y + s)

    p = draw(rng)
    inside = any(point_box_distance(p.x, p.y, pk.box()) <= 0.0 for pk in m.parked)
    if inside:
        # re-sample only when the first draw collided; clearance keeps the
        # target reachable without clamping near-obstacle situations away
        def clear(q: Point) -> bool:
            return all(point_box_distance(q.x, q.y, pk.box()) >= cfg.car_length for pk in m.parked)

        q = place_with_retries(rng, draw, clear, cfg.placement_attempts)
        if q is None:
            for road in roads:
                length = road_length(m, road)
                s = 0.0
                while s <= length:
                    ja = m.junction(road.a)
                    cand = (
                        Point(ja.x + s, ja.y) if road.axis == EW else Point(ja.x, ja.y + s)
                    )
                    if clear(cand):
                        return replace(m, target=cand)
                    s += cfg.car_length
            raise GenerationFailed("no clear target position")
        p = q
    return replace(m, target=p)


def generate_map(external_seed: int, config: GenConfig | None = None) -> WorldMap:
    """Generate a valid WorldMap; a pure function of (seed, config)."""
    cfg = config or GenConfig()
    problems = cfg.validate()
    if problems:
        raise ValueError("; ".join(problems))
    rng = SeededRng(external_seed)
    growth = _grow_network(rng, cfg)
    m = _build_skeleton(growth, cfg, external_seed)
    m = _place_parked(m, rng, cfg)
    m = replace(m, moving_car_count=rng.randint(*cfg.moving_range))
    m = _place_ego(m, rng, cfg)
    m = _place_target(m, rng, cfg)
    return m

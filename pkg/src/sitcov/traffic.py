"""Moving obstacle cars: lane following, random junction turns, respawns.

Cars drive on lane centrelines at a fixed speed, pick a random onward road
at junctions (never the road they arrived by), leave the network at
dead-ends and are replaced at a random free dead-end.  They ignore the ego
vehicle entirely — collisions with it are the accident monitors' business —
but never overlap each other or parked cars: a car holds position rather
than move into an occupied stretch of lane.

All randomness comes from the per-run traffic stream in a fixed order:
cars are stepped in id order each tick, and a junction draw happens only
when a car reaches a junction with two or more onward roads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .geometry import OrientedBox, Rect, boxes_intersect
from .rng import SeededRng
from .world import (
    CAR_LENGTH,
    CAR_WIDTH,
    WorldMap,
    Junction,
    RoadSegment,
    lane_cross_offset,
    lane_heading,
    lane_point,
    road_length,
)

TRAFFIC_SPEED = 8.0
STOP_GAP = 5.0  # hold this far behind anything blocking the lane


class NoFreeDeadEnd(RuntimeError):
    """Every dead-end entry area is occupied; respawn must wait."""


@dataclass(frozen=True)
class MovingCar:
    id: int
    road_id: int
    lane_dir: int  # +1 travelling a->b, -1 travelling b->a
    s: float       # along-road coordinate, measured from junction a
    speed: float = TRAFFIC_SPEED
    length: float = CAR_LENGTH
    width: float = CAR_WIDTH

    def position(self, m: WorldMap) -> tuple[float, float]:
        return lane_point(m, m.road(self.road_id), self.lane_dir, self.s)

    def heading(self, m: WorldMap) -> float:
        return lane_heading(m.road(self.road_id), self.lane_dir)

    def box(self, m: WorldMap) -> OrientedBox:
        x, y = self.position(m)
        return OrientedBox(x, y, self.heading(m), self.length, self.width)


class _Departed:
    __slots__ = ()

    def __repr__(self):
        return "Departed"


DEPARTED = _Departed()


def _lane_has_parked(m: WorldMap, road: RoadSegment, lane_dir: int) -> bool:
    return any(p.road_id == road.id and p.lane_dir == lane_dir for p in m.parked)


def _entry_lane(road: RoadSegment, jid: int) -> int:
    """Lane direction for a car entering `road` at junction `jid`."""
    return 1 if road.a == jid else -1


def _gap_ahead(m: WorldMap, car: MovingCar, others, parked) -> float:
    """Clear distance ahead of the car's front bumper along its lane."""
    road = m.road(car.road_id)
    gap = math.inf
    for o in others:
        if o.road_id == car.road_id and o.lane_dir == car.lane_dir:
            d = (o.s - car.s) * car.lane_dir
            if d > 0:
                gap = min(gap, d - 0.5 * (car.length + o.length))
    for p in parked:
        if p.road_id == car.road_id and p.lane_dir == car.lane_dir:
            ps = p.cx if road.axis == "EW" else p.cy
            ja = m.junction(road.a)
            ps -= ja.x if road.axis == "EW" else ja.y
            d = (ps - car.s) * car.lane_dir
            if d > 0:
                gap = min(gap, d - 0.5 * (car.length + p.length))
    return gap


def traffic_step(
    car: MovingCar,
    m: WorldMap,
    rng: SeededRng,
    dt: float,
    others: tuple[MovingCar, ...] = (),
):
    """Advance one car by dt; returns the updated car or DEPARTED.

    `others` are the remaining cars (already-stepped and not-yet-stepped
    alike) used for the no-overlap rule.
    """
    road = m.road(car.road_id)
    length = road_length(m, road)

    gap = _gap_ahead(m, car, others, m.parked)
    speed = car.speed
    if gap < STOP_GAP:
        speed = 0.0
    elif gap < STOP_GAP + car.speed * dt * 4:
        speed = min(speed, max(0.0, gap - STOP_GAP) / (dt * 4))

    if speed <= 0.0:
        return car

    new_s = car.s + speed * dt * car.lane_dir
    if 0.0 <= new_s <= length:
        moved = replace(car, s=new_s)
        if _overlaps_any(m, moved, others):
            return car
        return moved

    # reached a junction
    jid = road.b if car.lane_dir > 0 else road.a
    overshoot = (new_s - length) if car.lane_dir > 0 else -new_s
    onward = [r for r in m.incident_roads(jid) if r.id != road.id]
    if not onward:
        return DEPARTED
    onward.sort(key=lambda r: r.id)
    unblocked = [r for r in onward if not _lane_has_parked(m, r, _entry_lane(r, jid))]
    pool = unblocked or onward
    nxt = pool[0] if len(pool) == 1 else rng.choice(pool)
    new_dir = _entry_lane(nxt, jid)
    s0 = overshoot if new_dir > 0 else road_length(m, nxt) - overshoot
    moved = replace(car, road_id=nxt.id, lane_dir=new_dir, s=s0)
    if _overlaps_any(m, moved, others):
        return car
    return moved


def _overlaps_any(m: WorldMap, car: MovingCar, others) -> bool:
    box = car.box(m)
    return any(boxes_intersect(box, o.box(m)) for o in others if o.id != car.id)


def _entry_area(m: WorldMap, j: Junction, road: RoadSegment, depth: float = 14.0) -> Rect:
    h = 0.5 * road.width
    if road.axis == "EW":
        if road.a == j.id:
            return Rect(j.x - h, j.y - h, j.x + depth, j.y + h)
        return Rect(j.x - depth, j.y - h, j.x + h, j.y + h)
    if road.a == j.id:
        return Rect(j.x - h, j.y - h, j.x + h, j.y + depth)
    return Rect(j.x - h, j.y - depth, j.x + h, j.y + h)


def respawn(m: WorldMap, rng: SeededRng, occupied: list[OrientedBox], next_id: int) -> MovingCar:
    """New car entering at a uniformly chosen free dead-end.

    `occupied` holds footprints (cars and the ego) that make an entry area
    unavailable.  Raises NoFreeDeadEnd when every dead-end is busy; the
    caller defers and retries on a later step.
    """
    free: list[tuple[Junction, RoadSegment]] = []
    for j in sorted(m.dead_ends(), key=lambda j: j.id):
        road = m.incident_roads(j.id)[0]
        area = _entry_area(m, j, road)
        area_box = OrientedBox(
            0.5 * (area.xmin + area.xmax), 0.5 * (area.ymin + area.ymax), 0.0,
            area.width, area.height,
        )
        if any(boxes_intersect(area_box, b) for b in occupied):
            continue
        free.append((j, road))
    if not free:
        raise NoFreeDeadEnd("all dead-end entry areas are occupied")
    j, road = free[0] if len(free) == 1 else rng.choice(free)
    lane_dir = _entry_lane(road, j.id)
    s0 = 0.0 if lane_dir > 0 else road_length(m, road)
    return MovingCar(next_id, road.id, lane_dir, s0)

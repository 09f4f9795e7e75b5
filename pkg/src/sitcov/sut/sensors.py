"""Sensor models: visual road-marking scanner and obstacle scanner.

The marking scanner sweeps a forward arc of rays (low bearing to high) and
reports, per ray, the nearest road marking: the road centreline or a
road-edge line.  Three catalogued faults hook in here: fault 8 removes the
first half of the scan arc, fault 10 doubles the angular step, fault 12
halves the range.  A fault triggers once per ray whose hit is lost to it.

The obstacle scanner cannot see through obstacles: visibility is resolved
exactly by sweeping the bearings of footprint corners (for disjoint convex
footprints the visible set can only change at such tangent bearings) and
testing the interval between each consecutive pair.

Everything scanned is axis-aligned (roads, parked cars, traffic), which
keeps the ray casts exact and cheap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..geometry import Rect, angle_diff, segment_blocked
from ..world import EW, Pose, WorldMap, core_rect, road_endpoints, surface_rect
from .faults import FaultSet, TriggerLog

CENTRELINE = "centreline"
EDGE = "edge"


class InsufficientHistory(ValueError):
    """Trajectory prediction needs at least two samples."""


@dataclass(frozen=True)
class SensorParams:
    marking_arc: tuple[float, float] = (-0.5 * math.pi, 0.5 * math.pi)
    marking_resolution: float = math.radians(2.0)
    marking_range: float = 30.0
    obstacle_range: float = 40.0
    obstacle_arc: tuple[float, float] = (-0.75 * math.pi, 0.75 * math.pi)
    min_range: float = 0.5

    def __post_init__(self):
        if self.marking_arc[0] >= self.marking_arc[1]:
            raise ValueError("marking arc is empty")
        if self.marking_resolution <= 0:
            raise ValueError("marking resolution must be positive")
        if self.marking_range <= 0 or self.obstacle_range <= 0:
            raise ValueError("sensor ranges must be positive")


@dataclass(frozen=True)
class MarkingHit:
    bearing: float  # radians relative to heading, left positive
    distance: float
    kind: str  # CENTRELINE or EDGE


@dataclass(frozen=True)
class Detection:
    kind: str  # "parked" or "car"
    obstacle_id: int
    bearing: float
    distance: float
    rect: Rect
    visible_fraction: float
    far_hidden: bool
    away: tuple[float, float]  # unit vector from sensor along the rect's long axis


# ---------------------------------------------------------------------------
# Marking geometry, cached per map


class _MarkingScene:
    def __init__(self, m: WorldMap):
        vert = []  # (x, ylo, yhi, kind)
        horiz = []  # (y, xlo, xhi, kind)
        for r in m.roads:
            ja, jb = road_endpoints(m, r)
            surf = surface_rect(m, r)
            core = core_rect(m, r)
            if r.axis == EW:
                horiz.append((ja.y, core.xmin, core.xmax, 0))
                horiz.append((surf.ymin, surf.xmin, surf.xmax, 1))
                horiz.append((surf.ymax, surf.xmin, surf.xmax, 1))
                vert.append((surf.xmin, surf.ymin, surf.ymax, 1))
                vert.append((surf.xmax, surf.ymin, surf.ymax, 1))
            else:
                vert.append((ja.x, core.ymin, core.ymax, 0))
                vert.append((surf.xmin, surf.ymin, surf.ymax, 1))
                vert.append((surf.xmax, surf.ymin, surf.ymax, 1))
                horiz.append((surf.ymin, surf.xmin, surf.xmax, 1))
                horiz.append((surf.ymax, surf.xmin, surf.xmax, 1))
        self.v = np.array(vert, dtype=float).reshape(-1, 4)
        self.h = np.array(horiz, dtype=float).reshape(-1, 4)


_SCENE_CACHE: dict[int, tuple[WorldMap, _MarkingScene]] = {}


def _marking_scene(m: WorldMap) -> _MarkingScene:
    hit = _SCENE_CACHE.get(id(m))
    if hit is None or hit[0] is not m:
        if len(_SCENE_CACHE) > 64:
            _SCENE_CACHE.clear()
        hit = (m, _MarkingScene(m))
        _SCENE_CACHE[id(m)] = hit
    return hit[1]


def _cast_marking_rays(scene: _MarkingScene, px, py, angles, min_range, max_range):
    """Nearest marking hit per ray: arrays (distance, kind_code); inf = miss."""
    cos = np.cos(angles)
    sin = np.sin(angles)
    best = np.full(len(angles), np.inf)
    kind = np.full(len(angles), -1, dtype=int)
    with np.errstate(divide="ignore", invalid="ignore"):
        if len(scene.v):
            t = (scene.v[:, 0][None, :] - px) / cos[:, None]
            yhit = py + t * sin[:, None]
            ok = (
                (t >= min_range)
                & (t <= max_range)
                & (yhit >= scene.v[:, 1][None, :])
                & (yhit <= scene.v[:, 2][None, :])
            )
            t = np.where(ok, t, np.inf)
            i = np.argmin(t, axis=1)
            tv = t[np.arange(len(angles)), i]
            better = tv < best
            best = np.where(better, tv, best)
            kind = np.where(better, scene.v[:, 3].astype(int)[i], kind)
        if len(scene.h):
            t = (scene.h[:, 0][None, :] - py) / sin[:, None]
            xhit = px + t * cos[:, None]
            ok = (
                (t >= min_range)
                & (t <= max_range)
                & (xhit >= scene.h[:, 1][None, :])
                & (xhit <= scene.h[:, 2][None, :])
            )
            t = np.where(ok, t, np.inf)
            i = np.argmin(t, axis=1)
            th = t[np.arange(len(angles)), i]
            better = th < best
            best = np.where(better, th, best)
            kind = np.where(better, scene.h[:, 3].astype(int)[i], kind)
    return best, kind


def scan_road_markings(
    m: WorldMap,
    pose: Pose,
    params: SensorParams,
    faults: FaultSet = FaultSet.empty(),
    log: TriggerLog | None = None,
) -> list[MarkingHit]:
    """Sweep the marking arc and report the nearest marking per ray.

    Fault application order is fixed: 10 coarsens the bearing grid, 8 prunes
    bearings below the arc midpoint, the surviving rays are cast, then 12
    drops hits beyond half range.  Each fault logs one trigger per ray whose
    hit it suppressed.
    """
    scene = _marking_scene(m)
    lo, hi = params.marking_arc
    res = params.marking_resolution
    n = int(math.floor((hi - lo) / res + 1e-9)) + 1
    grid = [lo + i * res for i in range(n)]

    skipped: list[float] = []
    if 10 in faults:
        skipped = [b for i, b in enumerate(grid) if i % 2 == 1]
        grid = [b for i, b in enumerate(grid) if i % 2 == 0]

    mid = 0.5 * (lo + hi)
    pruned: list[float] = []
    if 8 in faults:
        pruned = [b for b in grid if b < mid]
        grid = [b for b in grid if b >= mid]
        skipped = [b for b in skipped if b >= mid]

    effective_range = params.marking_range
    if 12 in faults:
        effective_range = 0.5 * params.marking_range

    all_bearings = np.array(grid + pruned + skipped, dtype=float)
    if len(all_bearings) == 0:
        return []
    dists, kinds = _cast_marking_rays(
        scene, pose.x, pose.y, pose.heading + all_bearings,
        params.min_range, params.marking_range,
    )

    n_active = len(grid)
    n_pruned = len(pruned)
    if log is not None:
        if 8 in faults:
            lost = dists[n_active : n_active + n_pruned]
            log.record(8, int(np.sum(lost <= effective_range)))
        if 10 in faults:
            lost = dists[n_active + n_pruned :]
            log.record(10, int(np.sum(lost <= effective_range)))

    hits: list[MarkingHit] = []
    dropped_by_range = 0
    for i in range(n_active):
        d = dists[i]
        if not math.isfinite(d):
            continue
        if d > effective_range:
            dropped_by_range += 1
            continue
        hits.append(MarkingHit(grid[i], float(d), CENTRELINE if kinds[i] == 0 else EDGE))
    if log is not None and 12 in faults:
        log.record(12, dropped_by_range)
    hits.sort(key=lambda h: h.bearing)
    return hits


# ---------------------------------------------------------------------------
# Obstacle scanning with exact occlusion


_PARKED_CACHE: dict[int, tuple[WorldMap, list[tuple[int, Rect]]]] = {}


def _parked_rects(m: WorldMap) -> list[tuple[int, Rect]]:
    hit = _PARKED_CACHE.get(id(m))
    if hit is None or hit[0] is not m:
        if len(_PARKED_CACHE) > 64:
            _PARKED_CACHE.clear()
        hit = (m, [(p.id, p.box().aabb()) for p in m.parked])
        _PARKED_CACHE[id(m)] = hit
    return hit[1]


def _rect_sample_bearings(px, py, heading, rect: Rect) -> list[float]:
    """Tangent and nearest-point bearings of an AABB, relative to heading."""
    out = []
    for cx, cy in (
        (rect.xmin, rect.ymin),
        (rect.xmin, rect.ymax),
        (rect.xmax, rect.ymin),
        (rect.xmax, rect.ymax),
    ):
        out.append(angle_diff(math.atan2(cy - py, cx - px), heading))
    if rect.xmin <= px <= rect.xmax:
        for cy in (rect.ymin, rect.ymax):
            out.append(angle_diff(math.atan2(cy - py, 0.0), heading))
    if rect.ymin <= py <= rect.ymax:
        for cx in (rect.xmin, rect.xmax):
            out.append(angle_diff(0.0 if cx >= px else math.pi, heading))
    return out


def _cast_box_rays(rects: list[Rect], px, py, angles, min_range, max_range):
    """Index of nearest box per ray (-1 = miss) and its entry distance."""
    cos = np.cos(angles)
    sin = np.sin(angles)
    n = len(rects)
    arr = np.array(
        [(r.xmin, r.xmax, r.ymin, r.ymax) for r in rects], dtype=float
    ).reshape(n, 4)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_c = 1.0 / cos[:, None]
        inv_s = 1.0 / sin[:, None]
        t1x = (arr[:, 0][None, :] - px) * inv_c
        t2x = (arr[:, 1][None, :] - px) * inv_c
        t1y = (arr[:, 2][None, :] - py) * inv_s
        t2y = (arr[:, 3][None, :] - py) * inv_s
        tmin = np.maximum(np.minimum(t1x, t2x), np.minimum(t1y, t2y))
        tmax = np.minimum(np.maximum(t1x, t2x), np.maximum(t1y, t2y))
        entry = np.maximum(tmin, min_range)
        ok = (tmax >= entry) & (tmax >= min_range) & (tmin <= max_range)
        entry = np.where(ok, np.maximum(tmin, 0.0), np.inf)
    idx = np.argmin(entry, axis=1)
    dist = entry[np.arange(len(angles)), idx]
    idx = np.where(np.isfinite(dist), idx, -1)
    return idx, dist


def scan_obstacles(
    m: WorldMap,
    cars,
    pose: Pose,
    params: SensorParams,
) -> list[Detection]:
    """All obstacles visible from the pose, occluded portions removed.

    An obstacle entirely hidden behind another is absent from the result.
    Footprints are disjoint, so visibility can only change at footprint
    tangent bearings; the interval between each consecutive pair of those
    bearings is classified by its midpoint ray.
    """
    entries: list[tuple[str, int, Rect]] = []
    for pid, rect in _parked_rects(m):
        entries.append(("parked", pid, rect))
    for car in cars:
        entries.append(("car", car.id, car.box(m).aabb()))
    if not entries:
        return []

    lo, hi = params.obstacle_arc
    events = {lo, hi}
    for _, _, rect in entries:
        for b in _rect_sample_bearings(pose.x, pose.y, pose.heading, rect):
            if lo <= b <= hi:
                events.add(b)
    ev = sorted(events)
    samples = list(ev)
    for i in range(len(ev) - 1):
        samples.append(0.5 * (ev[i] + ev[i + 1]))
    angles = np.array(samples, dtype=float)

    rects = [e[2] for e in entries]
    idx, dist = _cast_box_rays(
        rects, pose.x, pose.y, pose.heading + angles,
        params.min_range, params.obstacle_range,
    )

    n_events = len(ev)
    seen: dict[int, dict] = {}
    for k in range(len(samples)):
        j = int(idx[k])
        if j < 0:
            continue
        rec = seen.setdefault(j, {"dist": math.inf, "bearing": 0.0, "span": 0.0})
        if dist[k] < rec["dist"]:
            rec["dist"] = float(dist[k])
            rec["bearing"] = float(samples[k])
        if k >= n_events:  # a midpoint ray: credit its interval to the box
            rec["span"] += ev[k - n_events + 1] - ev[k - n_events]

    out: list[Detection] = []
    all_rects = rects
    for j, rec in seen.items():
        kind, oid, rect = entries[j]
        full = _full_angular_span(pose.x, pose.y, rect)
        frac = min(rec["span"] / full, 1.0) if full > 0 else 1.0
        away = _away_axis(pose.x, pose.y, rect)
        far_hidden = _far_point_hidden(pose.x, pose.y, rect, away, all_rects)
        out.append(
            Detection(kind, oid, rec["bearing"], rec["dist"], rect, frac, far_hidden, away)
        )
    out.sort(key=lambda d: d.bearing)
    return out


def _full_angular_span(px, py, rect: Rect) -> float:
    bearings = [
        math.atan2(cy - py, cx - px)
        for cx, cy in (
            (rect.xmin, rect.ymin),
            (rect.xmin, rect.ymax),
            (rect.xmax, rect.ymin),
            (rect.xmax, rect.ymax),
        )
    ]
    ref = bearings[0]
    rel = [angle_diff(b, ref) for b in bearings]
    return max(rel) - min(rel)


def _away_axis(px, py, rect: Rect) -> tuple[float, float]:
    """Unit vector along the rect's long axis, pointing away from the sensor."""
    cx = 0.5 * (rect.xmin + rect.xmax)
    cy = 0.5 * (rect.ymin + rect.ymax)
    if rect.width >= rect.height:
        return (1.0, 0.0) if cx >= px else (-1.0, 0.0)
    return (0.0, 1.0) if cy >= py else (0.0, -1.0)


def _far_point_hidden(px, py, rect: Rect, away, all_rects) -> bool:
    length = max(rect.width, rect.height)
    cx = 0.5 * (rect.xmin + rect.xmax) + away[0] * length
    cy = 0.5 * (rect.ymin + rect.ymax) + away[1] * length
    return any(segment_blocked(px, py, cx, cy, r) for r in all_rects)


def predict_hidden_extension(detections: list[Detection]) -> list[Rect]:
    """Hypothesised footprints behind occlusion-truncated parked cars.

    For each detected parked car whose far end cannot be seen, assume one
    more car-length footprint immediately beyond it along its long axis.
    """
    out = []
    for d in detections:
        if d.kind != "parked" or not d.far_hidden:
            continue
        length = max(d.rect.width, d.rect.height)
        dx = d.away[0] * length
        dy = d.away[1] * length
        out.append(Rect(d.rect.xmin + dx, d.rect.ymin + dy, d.rect.xmax + dx, d.rect.ymax + dy))
    return out


def predict_trajectory(
    history,
    dt: float = 0.1,
    horizon: float = 3.0,
) -> list[tuple[float, float]]:
    """Constant-velocity extrapolation from the last two history samples.

    `history` holds (step, x, y) samples for one tracked obstacle.  Returns
    predicted positions at each simulation step over the horizon.
    """
    if len(history) < 2:
        raise InsufficientHistory(f"need >= 2 samples, have {len(history)}")
    s0, x0, y0 = history[-2]
    s1, x1, y1 = history[-1]
    span = (s1 - s0) * dt
    if span <= 0:
        raise InsufficientHistory("history samples must advance in time")
    vx = (x1 - x0) / span
    vy = (y1 - y0) / span
    steps = int(round(horizon / dt))
    return [(x1 + vx * k * dt, y1 + vy * k * dt) for k in range(1, steps + 1)]

"""The autonomous-car controller: lane keeping, navigation, overtaking.

Lane keeping is sensor-driven: the controller estimates where its own lane
centre lies from the marking scan (nearest centreline and edge hits on each
side) and steers a lookahead waypoint onto that estimate.  Route knowledge
is map-level only: which road it is on, where the junctions are, and the
target coordinates for scoring junction choices.

Navigation is stochastic.  At each junction the controller prefers roads it
has not visited, weighting candidates by closeness of their far endpoint to
the target, and draws from its per-run navigation stream.  Dead-ends force
a U-turn.  A lane blocked by parked cars triggers an overtake through the
opposing lane when the opposing lane is predicted clear.

Fault hooks (see faults.FAULT_CATALOGUE): 2 and 4 displace every created
waypoint; 17 freezes the steering command at its overtake-entry value while
overtaking; 18 makes the overtake clearance check look along the current
heading instead of the intended direction of travel.  Faults 8, 10 and 12
live in the marking scanner.  Within two metres of the target the
controller steers at the target itself (terminal guidance) and none of the
waypoint or marking machinery runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from ..geometry import Rect, angle_diff, segment_blocked
from ..rng import SeededRng
from ..world import (
    Junction,
    OffRoadPoint,
    Point,
    Pose,
    WorldMap,
    along_coord,
    containing_roads,
    cross_coord,
    lane_cross_offset,
    lane_heading,
    lane_point,
    network_shortest_path,
    road_length,
    road_of_point,
)
from .faults import FaultSet, TriggerLog
from .sensors import (
    CENTRELINE,
    Detection,
    MarkingHit,
    SensorParams,
    predict_hidden_extension,
    predict_trajectory,
    scan_obstacles,
    scan_road_markings,
)

MODE_DRIVING = "Driving"
MODE_OVERTAKING = "Overtaking"
MODE_UTURNING = "UTurning"


@dataclass(frozen=True)
class Actuation:
    steer: float  # turn rate command, rad/s, clamped by the controller
    speed: float  # m/s, >= 0


@dataclass(frozen=True)
class ControllerParams:
    cruise_speed: float = 10.0
    overtake_speed: float = 8.0
    turn_speed: float = 2.5
    uturn_speed: float = 1.5
    accel_limit: float = 4.0
    max_turn_rate: float = 1.2
    steer_gain: float = 2.2
    lookahead: float = 8.0
    waypoint_fault_delta: float = 0.5
    estimator_min_bearing: float = math.radians(25.0)
    forward_cone: float = math.radians(10.0)
    lateral_clamp: float = 2.5
    decision_distance: float = 26.0
    slow_distance: float = 20.0
    zone_exit: float = 7.0
    uturn_trigger_distance: float = 3.5
    block_check_distance: float = 22.0
    overtake_initiate_distance: float = 18.0
    return_margin: float = 7.0
    chain_gap: float = 7.0
    clearance_sector: float = math.radians(20.0)
    prediction_horizon: float = 3.0
    stop_gap: float = 4.0
    follow_gap: float = 12.0
    terminal_distance: float = 30.0
    stop_radius: float = 2.0
    yield_distance: float = 14.0
    vehicle_length: float = 4.0
    vehicle_width: float = 2.0


@dataclass
class OvertakeContext:
    road_id: int
    lane_dir: int
    return_s: float  # along coordinate to clear before returning to lane
    commit_s: float  # past this point the manoeuvre cannot be aborted
    entry_steer: float | None = None


@dataclass
class JunctionPlan:
    junction_id: int
    next_road_id: int
    next_lane_dir: int
    turning: bool
    uturn: bool
    exit_x: float
    exit_y: float
    apex_x: float
    apex_y: float
    apex_passed: bool = False


@dataclass
class ControllerState:
    pose: Pose
    speed: float
    road_id: int
    lane_dir: int
    visited_roads: set[int]
    mode: str = MODE_DRIVING
    current_waypoint: tuple[float, float] | None = None
    overtake: OvertakeContext | None = None
    plan: JunctionPlan | None = None
    tracks: dict[int, list[tuple[int, float, float]]] = field(default_factory=dict)
    triggers: TriggerLog = field(default_factory=TriggerLog)
    step: int = 0
    stall_steps: int = 0


class Readings:
    """Sensor bundle for one control step.

    The obstacle detections are always present; the marking scan is lazy and
    runs only if the controller actually consults it, so a step that never
    needs markings leaves the marking-fault hooks unexecuted.
    """

    def __init__(self, markings_fn, detections: list[Detection]):
        self._markings_fn = markings_fn
        self._markings: list[MarkingHit] | None = None
        self._scanned = False
        self.detections = detections

    @property
    def markings(self) -> list[MarkingHit]:
        if not self._scanned:
            self._markings = self._markings_fn()
            self._scanned = True
        return self._markings


# ---------------------------------------------------------------------------
# Lane-centre estimation from marking hits


def lane_centre_estimate(
    markings: list[MarkingHit],
    quarter_width: float,
    min_bearing: float,
) -> float | None:
    """Lateral offset (left positive, body frame) of the own-lane centre.

    Uses the nearest centreline hit and the nearest edge hit to its right;
    with only one side visible it falls back on the known lane geometry,
    assuming the nearest marking is the expected one — the honest weakness
    of a simple estimator.  Returns None with no usable side hits.
    """
    lat_c: list[float] = []
    lat_e: list[float] = []
    for h in markings:
        if abs(h.bearing) < min_bearing:
            continue
        lat = h.distance * math.sin(h.bearing)
        if h.kind == CENTRELINE:
            lat_c.append(lat)
        else:
            lat_e.append(lat)
    c = min(lat_c, key=abs) if lat_c else None
    ref = c if c is not None else 0.0
    rights = [l for l in lat_e if l < ref]
    e = max(rights) if rights else None
    if c is not None and e is not None:
        return 0.5 * (c + e)
    if c is not None:
        return c - quarter_width
    if e is not None:
        return e + quarter_width
    lefts = [l for l in lat_e if l > 0]
    if lefts:
        return min(lefts) - 3.0 * quarter_width
    return None


def forward_marking_distance(markings: list[MarkingHit], cone: float) -> float:
    """Distance to the nearest marking roughly dead ahead (inf if none)."""
    best = math.inf
    for h in markings:
        if abs(h.bearing) <= cone and h.distance < best:
            best = h.distance
    return best


# ---------------------------------------------------------------------------
# Waypoint creation (fault hooks 2 and 4 funnel through here)


def _finish_waypoint(
    x: float,
    y: float,
    faults: FaultSet,
    log: TriggerLog | None,
    delta: float,
) -> tuple[float, float]:
    if 2 in faults:
        x += delta
        y += delta
        if log is not None:
            log.record(2)
    if 4 in faults:
        x += delta
        y -= delta
        if log is not None:
            log.record(4)
    return x, y


def next_waypoint(
    state: ControllerState,
    markings: list[MarkingHit],
    m: WorldMap,
    faults: FaultSet = FaultSet.empty(),
    log: TriggerLog | None = None,
    params: ControllerParams = ControllerParams(),
) -> Point:
    """Cruise waypoint: the estimated own-lane centre one lookahead ahead."""
    road = m.road(state.road_id)
    est = lane_centre_estimate(markings, 0.25 * road.width, params.estimator_min_bearing)
    lat = 0.0 if est is None else max(-params.lateral_clamp, min(params.lateral_clamp, est))
    c = math.cos(state.pose.heading)
    s = math.sin(state.pose.heading)
    wx = state.pose.x + c * params.lookahead - s * lat
    wy = state.pose.y + s * params.lookahead + c * lat
    wx, wy = _finish_waypoint(wx, wy, faults, log, params.waypoint_fault_delta)
    return Point(wx, wy)


# ---------------------------------------------------------------------------
# Junction choice


def choose_road_at_junction(
    state: ControllerState,
    junction: Junction,
    m: WorldMap,
    rng: SeededRng,
) -> int:
    """Pick the onward road: unvisited roads beat visited ones, and within a
    tier the draw is weighted by 1/(1 + network distance from the road's far
    endpoint to the target).  A dead-end returns the arrival road (U-turn).
    One rng draw is consumed only when the tier has two or more roads.
    """
    incident = sorted(m.incident_roads(junction.id), key=lambda r: r.id)
    cands = [r for r in incident if r.id != state.road_id]
    if not cands:
        return state.road_id
    unvisited = [r for r in cands if r.id not in state.visited_roads]
    pool = unvisited or cands
    if len(pool) == 1:
        return pool[0].id
    weights = []
    for r in pool:
        far = r.b if r.a == junction.id else r.a
        jf = m.junction(far)
        try:
            d = network_shortest_path(m, Point(jf.x, jf.y), m.target)
        except OffRoadPoint:
            d = m.bounds.diagonal()
        weights.append(1.0 / (1.0 + d))
    return pool[rng.weighted_index(weights)].id


# ---------------------------------------------------------------------------
# The controller proper


class CarController:
    def __init__(
        self,
        m: WorldMap,
        nav_rng: SeededRng,
        faults: FaultSet = FaultSet.empty(),
        params: ControllerParams | None = None,
        sensor_params: SensorParams | None = None,
    ):
        self.m = m
        self.rng = nav_rng
        self.faults = faults
        self.p = params or ControllerParams()
        self.sp = sensor_params or SensorParams()
        road = road_of_point(m, m.ego_start.x, m.ego_start.y)
        if road is None:
            raise ValueError("ego start is not on a road")
        lane_dir = 1 if abs(angle_diff(m.ego_start.heading, lane_heading(road, 1))) < 0.5 * math.pi else -1
        self.state = ControllerState(
            pose=m.ego_start,
            speed=0.0,
            road_id=road.id,
            lane_dir=lane_dir,
            visited_roads={road.id},
        )
        tr = road_of_point(m, m.target.x, m.target.y)
        self._target_road_id = tr.id if tr is not None else -1
        self._target_s = along_coord(m, tr, m.target.x, m.target.y) if tr is not None else 0.0

    # -- sensing ------------------------------------------------------------

    def sense(self, cars) -> Readings:
        pose = self.state.pose
        detections = scan_obstacles(self.m, cars, pose, self.sp)

        def markings_fn():
            return scan_road_markings(self.m, pose, self.sp, self.faults, self.state.triggers)

        return Readings(markings_fn, detections)

    # -- main entry ---------------------------------------------------------

    def control_step(self, readings: Readings, dt: float) -> Actuation:
        st = self.state
        st.step += 1
        self._update_tracks(readings.detections)
        self._localise()
        self._progress_plan()

        if st.mode == MODE_UTURNING:
            act = self._uturn_step(readings)
        elif st.mode == MODE_OVERTAKING:
            act = self._overtake_step(readings)
        else:
            act = self._drive_step(readings)

        steer = max(-self.p.max_turn_rate, min(self.p.max_turn_rate, act.steer))
        speed = max(0.0, min(self.p.cruise_speed, act.speed))
        # acceleration-limited speed tracking
        speed = max(st.speed - self.p.accel_limit * dt, min(st.speed + self.p.accel_limit * dt, speed))

        if st.mode == MODE_OVERTAKING and 17 in self.faults:
            ctx = st.overtake
            if ctx.entry_steer is None:
                ctx.entry_steer = steer
            else:
                steer = ctx.entry_steer
            st.triggers.record(17)

        st.stall_steps = st.stall_steps + 1 if speed < 0.3 else 0
        st.speed = speed
        return Actuation(steer, speed)

    # -- bookkeeping ---------------------------------------------------------

    def _update_tracks(self, detections: list[Detection]) -> None:
        st = self.state
        seen = set()
        for d in detections:
            if d.kind != "car":
                continue
            seen.add(d.obstacle_id)
            cx = 0.5 * (d.rect.xmin + d.rect.xmax)
            cy = 0.5 * (d.rect.ymin + d.rect.ymax)
            tr = st.tracks.setdefault(d.obstacle_id, [])
            tr.append((st.step, cx, cy))
            if len(tr) > 6:
                del tr[0]
        stale = [k for k, tr in st.tracks.items() if st.step - tr[-1][0] > 10 and k not in seen]
        for k in stale:
            del st.tracks[k]

    def _localise(self) -> None:
        st = self.state
        roads = containing_roads(self.m, st.pose.x, st.pose.y)
        ids = {r.id for r in roads}
        if st.road_id in ids or not roads:
            if st.road_id in ids and st.mode == MODE_DRIVING and st.plan is None:
                # sustained reversal means the travel-direction belief is stale
                road = self.m.road(st.road_id)
                if abs(angle_diff(st.pose.heading, lane_heading(road, st.lane_dir))) > 2.6:
                    st.lane_dir = -st.lane_dir
            return
        road = road_of_point(self.m, st.pose.x, st.pose.y)
        expected = st.plan.next_road_id if st.plan else None
        if road.id != expected and st.mode == MODE_DRIVING:
            st.road_id = road.id
            st.lane_dir = (
                1 if abs(angle_diff(st.pose.heading, lane_heading(road, 1))) < 0.5 * math.pi else -1
            )
            st.visited_roads.add(road.id)
            st.plan = None

    def _progress_plan(self) -> None:
        st = self.state
        if st.plan is None or st.plan.uturn:
            return
        nxt = self.m.road(st.plan.next_road_id)
        j = self.m.junction(st.plan.junction_id)
        s = along_coord(self.m, nxt, st.pose.x, st.pose.y)
        s_j = along_coord(self.m, nxt, j.x, j.y)
        past = (s - s_j) * st.plan.next_lane_dir
        on_next = any(r.id == nxt.id for r in containing_roads(self.m, st.pose.x, st.pose.y))
        if on_next and past >= nxt.width * 0.5:
            st.road_id = nxt.id
            st.lane_dir = st.plan.next_lane_dir
            st.visited_roads.add(nxt.id)
            st.plan = None

    def _ahead_junction(self) -> tuple[Junction, float]:
        st = self.state
        road = self.m.road(st.road_id)
        s = along_coord(self.m, road, st.pose.x, st.pose.y)
        if st.lane_dir > 0:
            return self.m.junction(road.b), road_length(self.m, road) - s
        return self.m.junction(road.a), s

    # -- steering helpers ----------------------------------------------------

    def _steer_to(self, x: float, y: float) -> float:
        pose = self.state.pose
        want = math.atan2(y - pose.y, x - pose.x)
        return self.p.steer_gain * angle_diff(want, pose.heading)

    def _body_waypoint(self, forward: float, lateral: float) -> tuple[float, float]:
        pose = self.state.pose
        c = math.cos(pose.heading)
        s = math.sin(pose.heading)
        wx = pose.x + c * forward - s * lateral
        wy = pose.y + s * forward + c * lateral
        return _finish_waypoint(wx, wy, self.faults, self.state.triggers, self.p.waypoint_fault_delta)

    # -- obstruction assessment ----------------------------------------------

    def _lane_corridor(self, lane_dir: int, s_from: float, s_to: float, halfwidth: float) -> Rect:
        road = self.m.road(self.state.road_id)
        ja = self.m.junction(road.a)
        off = lane_cross_offset(road, lane_dir)
        lo, hi = min(s_from, s_to), max(s_from, s_to)
        if road.axis == "EW":
            return Rect(ja.x + lo, ja.y + off - halfwidth, ja.x + hi, ja.y + off + halfwidth)
        return Rect(ja.x + off - halfwidth, ja.y + lo, ja.x + off + halfwidth, ja.y + hi)

    def _own_lane_blockers(self, readings: Readings):
        """Static obstructions in the own-lane corridor ahead.

        Returns (distance to the first blocker's near edge, along-road
        coordinate where the contiguous chain of blockers ends) or None.
        Hypothesised hidden cars extend chains like real ones.
        """
        st = self.state
        road = self.m.road(st.road_id)
        s = along_coord(self.m, road, st.pose.x, st.pose.y)
        s_end = s + st.lane_dir * self.p.block_check_distance
        corridor = self._lane_corridor(st.lane_dir, s, s_end, 0.5 * self.p.vehicle_width + 0.2)

        rects = [d.rect for d in readings.detections if d.kind == "parked"]
        rects += predict_hidden_extension(readings.detections)
        ja = self.m.junction(road.a)
        origin = ja.x if road.axis == "EW" else ja.y

        spans = []  # (near-edge distance ahead, near s, far s)
        for r in rects:
            if not corridor.overlaps(r):
                continue
            s_lo = (r.xmin if road.axis == "EW" else r.ymin) - origin
            s_hi = (r.xmax if road.axis == "EW" else r.ymax) - origin
            near_s, far_s = (s_lo, s_hi) if st.lane_dir > 0 else (s_hi, s_lo)
            dist = (near_s - s) * st.lane_dir
            if dist > -self.p.vehicle_length:
                spans.append((dist, near_s, far_s))
        if not spans:
            return None
        spans.sort()
        first_dist = spans[0][0]
        chain_far = spans[0][2]
        for _, near_s, far_s in spans[1:]:
            if (near_s - chain_far) * st.lane_dir <= self.p.chain_gap:
                if (far_s - chain_far) * st.lane_dir > 0:
                    chain_far = far_s
            else:
                break
        return first_dist, chain_far

    def _overtake_clear(self, readings: Readings, return_s: float, during: bool) -> bool:
        """Opposing lane clear over the manoeuvre horizon?

        The obstacle look direction is the intended direction of travel
        (the lane heading); fault 18 replaces it with the current heading
        while overtaking, one trigger per check.
        """
        st = self.state
        road = self.m.road(st.road_id)
        ref = lane_heading(road, st.lane_dir)
        if during and 18 in self.faults:
            ref = st.pose.heading
            st.triggers.record(18)

        s = along_coord(self.m, road, st.pose.x, st.pose.y)
        corr_end = return_s + st.lane_dir * (self.p.prediction_horizon * 8.0)
        corridor = self._lane_corridor(-st.lane_dir, s, corr_end, 1.6)
        # parked cars in the opposing lane block the manoeuvre outright
        for d in readings.detections:
            if d.kind == "parked" and corridor.overlaps(d.rect):
                return False
        for d in readings.detections:
            if d.kind != "car":
                continue
            bearing_world = st.pose.heading + d.bearing
            if abs(angle_diff(bearing_world, ref)) > self.p.clearance_sector:
                continue  # outside the sector this check looks at
            cx = 0.5 * (d.rect.xmin + d.rect.xmax)
            cy = 0.5 * (d.rect.ymin + d.rect.ymax)
            pts = [(cx, cy)]
            tr = st.tracks.get(d.obstacle_id, [])
            if len(tr) >= 2:
                try:
                    pts += predict_trajectory(tr, dt=0.1, horizon=self.p.prediction_horizon)
                except Exception:
                    pass
            grown = corridor.expanded(1.0)
            if any(grown.contains(px, py) for px, py in pts):
                return False
        return True

    # -- mode steps ----------------------------------------------------------

    def _terminal(self, readings: Readings) -> Actuation | None:
        st = self.state
        if st.road_id != self._target_road_id:
            return None
        road = self.m.road(st.road_id)
        s = along_coord(self.m, road, st.pose.x, st.pose.y)
        ds = (self._target_s - s) * st.lane_dir
        dist = math.hypot(self.m.target.x - st.pose.x, self.m.target.y - st.pose.y)
        if ds < -2.0 or dist > self.p.terminal_distance:
            return None
        # approach only if the straight line in is passable; the dodge handles
        # the last half metre around anything parked close to the target
        for d in readings.detections:
            if segment_blocked(
                st.pose.x, st.pose.y, self.m.target.x, self.m.target.y, d.rect.expanded(0.9)
            ):
                return None
        st.mode = MODE_DRIVING
        st.current_waypoint = None
        speed = min(self.p.cruise_speed, max(0.6, 1.2 * (dist - 0.8)))
        if dist <= self.p.stop_radius:
            speed = 0.0
        wx, wy, speed = self._dodge(readings, self.m.target.x, self.m.target.y, speed)
        return Actuation(self._steer_to(wx, wy), speed)

    def _drive_step(self, readings: Readings) -> Actuation:
        st = self.state
        p = self.p
        term = self._terminal(readings)
        if term is not None:
            return term

        if not containing_roads(self.m, st.pose.x, st.pose.y):
            return self._recover_step()

        markings = readings.markings
        junction, dj = self._ahead_junction()
        if st.plan is None and dj <= p.decision_distance:
            self._decide_junction(junction)

        blockers = self._own_lane_blockers(readings)

        if st.plan is not None and st.plan.uturn:
            # turn around early if the lane is blocked short of the dead-end
            at_blocker = blockers is not None and blockers[0] <= p.overtake_initiate_distance
            if dj <= p.uturn_trigger_distance or at_blocker:
                st.mode = MODE_UTURNING
                return self._uturn_step(readings)

        if st.stall_steps > 150:
            # wedged in (both lanes blocked, endless yield...): turn around
            st.stall_steps = 0
            st.plan = None
            st.mode = MODE_UTURNING
            return self._uturn_step(readings)

        if blockers is not None and st.plan is not None and dj < blockers[0]:
            blockers = None  # junction first; revisit the obstruction after
        if blockers is not None and blockers[0] <= p.overtake_initiate_distance:
            road = self.m.road(st.road_id)
            s = along_coord(self.m, road, st.pose.x, st.pose.y)
            s_junction = road_length(self.m, road) if st.lane_dir > 0 else 0.0
            return_s = blockers[1] + st.lane_dir * p.return_margin
            room = (s_junction - return_s) * st.lane_dir
            if room >= 4.0 and self._overtake_clear(readings, return_s, during=False):
                st.mode = MODE_OVERTAKING
                st.overtake = OvertakeContext(
                    road_id=st.road_id,
                    lane_dir=st.lane_dir,
                    return_s=return_s,
                    commit_s=s + st.lane_dir * max(blockers[0] - p.vehicle_length, 2.0),
                )
                return self._overtake_step(readings)
            # hold behind the obstruction until the opposing lane clears
            gap = blockers[0]
            wx, wy = self._cruise_waypoint(markings, min(p.lookahead, max(gap, 2.0)))
            speed = self._braking_speed(gap)
            return Actuation(self._steer_to(wx, wy), speed)

        # steering: junction turn geometry near the junction, lane keeping outside
        zone = self.m.road(st.road_id).width
        if st.plan is not None and dj <= zone:
            if st.plan.turning and dj > self._turn_start_distance(st.plan):
                # hold the entry lane (map-based: markings are clutter here)
                road = self.m.road(st.road_id)
                s = along_coord(self.m, road, st.pose.x, st.pose.y)
                tx, ty = lane_point(self.m, road, st.lane_dir, s + st.lane_dir * 5.0)
            elif st.plan.turning:
                # short-lookahead pursuit of the exit lane centreline
                nxt = self.m.road(st.plan.next_road_id)
                sp = along_coord(self.m, nxt, st.pose.x, st.pose.y)
                tx, ty = lane_point(
                    self.m, nxt, st.plan.next_lane_dir, sp + st.plan.next_lane_dir * 4.0
                )
            else:
                tx, ty = st.plan.exit_x, st.plan.exit_y
            wx, wy = _finish_waypoint(tx, ty, self.faults, st.triggers, p.waypoint_fault_delta)
            st.current_waypoint = (wx, wy)
        else:
            wx, wy = self._cruise_waypoint(markings, p.lookahead)

        speed = p.cruise_speed
        if st.plan is not None and (st.plan.turning or st.plan.uturn):
            d_fwd = forward_marking_distance(markings, p.forward_cone)
            warn = min(d_fwd, dj)
            if warn < p.slow_distance:
                vt = p.uturn_speed if st.plan.uturn else p.turn_speed
                speed = min(
                    speed,
                    math.sqrt(vt * vt + 2.0 * p.accel_limit * max(warn - 4.0, 0.0)),
                )
        speed = min(speed, self._follow_limit(readings))
        speed = min(speed, self._yield_limit(readings, junction, dj))
        wx, wy, speed = self._dodge(readings, wx, wy, speed)
        st.current_waypoint = (wx, wy)
        return Actuation(self._steer_to(wx, wy), speed)

    def _turn_start_distance(self, plan: JunctionPlan) -> float:
        """Distance from the junction centre at which to begin the turn.

        The turn is a clamped-rate arc at turn speed; starting it where the
        ideal arc is tangent to the entry lane keeps it off the inside
        corner (right turns) and off the far edge (left turns).
        """
        st = self.state
        r = self.p.turn_speed / self.p.max_turn_rate
        cur_h = lane_heading(self.m.road(st.road_id), st.lane_dir)
        nxt_h = lane_heading(self.m.road(plan.next_road_id), plan.next_lane_dir)
        side = 1.0 if angle_diff(nxt_h, cur_h) > 0 else -1.0  # +1 left turn
        lane_off = 0.25 * self.m.road(st.road_id).width
        return max(r - side * lane_off, 0.5)

    def _dodge(self, readings: Readings, wx: float, wy: float, speed: float):
        """Skirt any detected footprint sitting on the straight path to the
        waypoint: shift the waypoint to the nearer free side and slow down."""
        st = self.state
        pose = st.pose
        c = math.cos(pose.heading)
        s = math.sin(pose.heading)
        clearance = 0.5 * self.p.vehicle_width + 0.4
        rects = [d.rect for d in readings.detections]
        rects += predict_hidden_extension(readings.detections)
        for rect in rects:
            grown = rect.expanded(clearance)
            if not segment_blocked(pose.x, pose.y, wx, wy, grown):
                continue
            corners = (
                (grown.xmin, grown.ymin), (grown.xmin, grown.ymax),
                (grown.xmax, grown.ymin), (grown.xmax, grown.ymax),
            )
            fwd = [c * (px - pose.x) + s * (py - pose.y) for px, py in corners]
            lat = [-s * (px - pose.x) + c * (py - pose.y) for px, py in corners]
            near = min(f for f in fwd)
            if near > 14.0:
                continue
            wp_fwd = c * (wx - pose.x) + s * (wy - pose.y)
            wp_lat = -s * (wx - pose.x) + c * (wy - pose.y)
            options = sorted(
                (max(lat) + 0.7, min(lat) - 0.7), key=lambda v: abs(v - wp_lat)
            )
            # prefer a dodge that keeps the waypoint on a road surface
            new_lat = options[0]
            for v in options:
                px = pose.x + c * wp_fwd - s * v
                py = pose.y + s * wp_fwd + c * v
                if containing_roads(self.m, px, py):
                    new_lat = v
                    break
            wx = pose.x + c * wp_fwd - s * new_lat
            wy = pose.y + s * wp_fwd + c * new_lat
            speed = min(speed, max(2.0, 0.45 * max(near, 0.0)))
            break
        return wx, wy, speed

    def _cruise_waypoint(self, markings, lookahead: float) -> tuple[float, float]:
        st = self.state
        road = self.m.road(st.road_id)
        est = lane_centre_estimate(markings, 0.25 * road.width, self.p.estimator_min_bearing)
        lat = 0.0 if est is None else max(-self.p.lateral_clamp, min(self.p.lateral_clamp, est))
        # with the nose far off the road axis the lateral readings rotate out
        # of the lane frame; re-align with the lane before trusting them again
        lane_h = lane_heading(road, st.lane_dir)
        dev = angle_diff(st.pose.heading, lane_h)
        if abs(dev) > 0.5:
            wx = st.pose.x + lookahead * math.cos(lane_h)
            wy = st.pose.y + lookahead * math.sin(lane_h)
            wp = _finish_waypoint(wx, wy, self.faults, st.triggers, self.p.waypoint_fault_delta)
        else:
            wp = self._body_waypoint(lookahead, lat)
        st.current_waypoint = wp
        return wp

    def _recover_step(self) -> Actuation:
        """Off every road surface: head back to the last known lane."""
        st = self.state
        road = self.m.road(st.road_id)
        s = along_coord(self.m, road, st.pose.x, st.pose.y)
        x, y = lane_point(self.m, road, st.lane_dir, s + st.lane_dir * 5.0)
        wx, wy = _finish_waypoint(x, y, self.faults, st.triggers, self.p.waypoint_fault_delta)
        st.current_waypoint = (wx, wy)
        return Actuation(self._steer_to(wx, wy), self.p.turn_speed)

    def _follow_limit(self, readings: Readings) -> float:
        """Speed cap behind a moving car ahead in the own lane."""
        st = self.state
        road = self.m.road(st.road_id)
        s = along_coord(self.m, road, st.pose.x, st.pose.y)
        corridor = self._lane_corridor(
            st.lane_dir, s, s + st.lane_dir * self.p.follow_gap * 2.5, 1.6
        )
        limit = math.inf
        for d in readings.detections:
            if d.kind != "car" or not corridor.overlaps(d.rect):
                continue
            if abs(d.bearing) > math.radians(60.0):
                continue  # beside or behind, not a leader
            gap = d.distance
            if gap < self.p.follow_gap:
                limit = min(limit, self._braking_speed(gap))
        return limit

    def _braking_speed(self, gap: float) -> float:
        """Highest speed from which the accel limit still stops stop_gap short."""
        run_out = max(gap - self.p.stop_gap, 0.0)
        return 0.9 * math.sqrt(2.0 * self.p.accel_limit * run_out)

    def _yield_limit(self, readings: Readings, junction: Junction, dj: float) -> float:
        """Hold short of a junction the ego wants to turn through while
        moving traffic is about to occupy it."""
        st = self.state
        if st.plan is None or not (st.plan.turning or st.plan.uturn) or dj > self.p.yield_distance:
            return math.inf
        for d in readings.detections:
            if d.kind != "car":
                continue
            cx = 0.5 * (d.rect.xmin + d.rect.xmax)
            cy = 0.5 * (d.rect.ymin + d.rect.ymax)
            if math.hypot(cx - junction.x, cy - junction.y) > 12.0:
                continue
            tr = st.tracks.get(d.obstacle_id, [])
            if len(tr) >= 2:
                (s0, x0, y0), (s1, x1, y1) = tr[-2], tr[-1]
                if math.hypot(x1 - x0, y1 - y0) < 0.05 * max(s1 - s0, 1):
                    continue  # parked-in-lane traffic, not a conflict
            return max(0.0, 1.0 * (dj - (self.m.road(st.road_id).width + 1.0)))
        return math.inf

    def _decide_junction(self, junction: Junction) -> None:
        st = self.state
        rid = choose_road_at_junction(st, junction, self.m, self.rng)
        uturn = rid == st.road_id
        nxt = self.m.road(rid)
        if uturn:
            next_dir = -st.lane_dir
        else:
            next_dir = 1 if nxt.a == junction.id else -1
        cur_h = lane_heading(self.m.road(st.road_id), st.lane_dir)
        nxt_h = lane_heading(nxt, next_dir)
        turning = abs(angle_diff(nxt_h, cur_h)) > 1e-6
        if uturn:
            ex, ey = lane_point(
                self.m, nxt, next_dir,
                along_coord(self.m, nxt, junction.x, junction.y)
                + next_dir * (nxt.width + 3.0),
            )
        else:
            s_j = along_coord(self.m, nxt, junction.x, junction.y)
            ex, ey = lane_point(self.m, nxt, next_dir, s_j + next_dir * self.p.zone_exit)
        st.plan = JunctionPlan(
            junction.id, rid, next_dir, turning, uturn, ex, ey, junction.x, junction.y
        )

    def _uturn_step(self, readings: Readings) -> Actuation:
        st = self.state
        plan = st.plan
        road = self.m.road(st.road_id)
        target_dir = plan.next_lane_dir if plan is not None and plan.uturn else -st.lane_dir
        target_h = lane_heading(road, target_dir)
        err = angle_diff(target_h, st.pose.heading)
        if abs(err) < math.radians(30.0):
            st.lane_dir = target_dir
            st.mode = MODE_DRIVING
            st.plan = None
            return self._drive_step(readings)
        if st.speed > 1.6 * self.p.uturn_speed:
            # brake in lane first; spinning at speed sweeps far off the road
            s = along_coord(self.m, road, st.pose.x, st.pose.y)
            x, y = lane_point(self.m, road, st.lane_dir, s + st.lane_dir * 4.0)
            wx, wy = _finish_waypoint(x, y, self.faults, st.triggers, self.p.waypoint_fault_delta)
            st.current_waypoint = (wx, wy)
            return Actuation(self._steer_to(wx, wy), self.p.uturn_speed)
        if abs(err) > 0.5 * math.pi:
            # commit to a left turn while pointing the wrong way: the opposing
            # lane is always to the left under right-hand traffic
            steer = self.p.max_turn_rate
            s = along_coord(self.m, road, st.pose.x, st.pose.y)
            x, y = lane_point(self.m, road, target_dir, s)
        else:
            s = along_coord(self.m, road, st.pose.x, st.pose.y)
            x, y = lane_point(self.m, road, target_dir, s + target_dir * 4.0)
            steer = None
        wx, wy = _finish_waypoint(x, y, self.faults, st.triggers, self.p.waypoint_fault_delta)
        st.current_waypoint = (wx, wy)
        if steer is None:
            steer = self._steer_to(wx, wy)
        return Actuation(steer, self.p.uturn_speed)

    def _overtake_step(self, readings: Readings) -> Actuation:
        st = self.state
        p = self.p
        ctx = st.overtake
        if not containing_roads(self.m, st.pose.x, st.pose.y):
            # the manoeuvre has gone badly wrong; give up and recover
            st.mode = MODE_DRIVING
            st.overtake = None
            return self._recover_step()
        if st.stall_steps > 60:
            # no progress (something immovable in the passing lane): back out
            st.mode = MODE_DRIVING
            st.overtake = None
            st.stall_steps = 0
            return self._drive_step(readings)
        road = self.m.road(ctx.road_id)
        s = along_coord(self.m, road, st.pose.x, st.pose.y)
        passed = (s - ctx.return_s) * ctx.lane_dir >= 0.0
        committed = (s - ctx.commit_s) * ctx.lane_dir >= 0.0

        if not passed and not committed:
            if not self._overtake_clear(readings, ctx.return_s, during=True):
                st.mode = MODE_DRIVING
                st.overtake = None
                return self._drive_step(readings)

        markings = readings.markings
        est = lane_centre_estimate(markings, 0.25 * road.width, p.estimator_min_bearing)
        base = 0.0 if est is None else max(-p.lateral_clamp, min(p.lateral_clamp, est))
        if not passed:
            lat = base + 0.5 * road.width
            # never steer past the far road edge
            lefts = [
                h.distance * math.sin(h.bearing)
                for h in markings
                if h.bearing >= p.estimator_min_bearing
                and h.distance * math.sin(h.bearing) > 0
            ]
            if lefts:
                lat = min(lat, min(lefts) - 1.2)
        else:
            lat = base
            cross = cross_coord(self.m, road, st.pose.x, st.pose.y)
            own = lane_cross_offset(road, ctx.lane_dir)
            dev = angle_diff(st.pose.heading, lane_heading(road, ctx.lane_dir))
            if cross * own > 0 and abs(dev) < math.radians(25.0):
                st.mode = MODE_DRIVING
                st.overtake = None
                return self._drive_step(readings)
        lat = max(-2.8, min(3.2, lat))
        wx, wy = self._body_waypoint(9.0, lat)
        speed = self._follow_limit(readings)
        wx, wy, speed = self._dodge(readings, wx, wy, min(p.overtake_speed, speed))
        st.current_waypoint = (wx, wy)
        return Actuation(self._steer_to(wx, wy), speed)

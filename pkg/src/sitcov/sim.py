"""Discrete-time simulation engine: ego + traffic + accident monitors.

Each step runs sense -> control -> move ego -> step traffic -> monitors.
Ego kinematics are first order: heading += steer*dt (steer clamped by the
controller), position += speed*dt along the heading.  A run ends when the
ego stops within the target radius or the step budget runs out; accident
events never terminate a run, they are logged and the run continues.

Determinism: a RunResult is a pure function of (map, RunConfig).  The
external seed owns the map and the initial traffic placement; the internal
seed owns the navigation and traffic decision streams.  Two monitors'
worth of per-(kind, counterpart) deduplication state is the only mutable
monitor memory: an event pair re-raises only after a 50-step cooldown.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace

from .geometry import OrientedBox, boxes_intersect, norm_heading
from .mapgen import GenConfig, generate_map, initial_moving_car_poses
from .rng import STREAM_NAV, STREAM_TRAFFIC, SeededRng, derive_seed
from .sut.controller import CarController, ControllerParams
from .sut.faults import FaultSet
from .sut.sensors import SensorParams
from .traffic import DEPARTED, MovingCar, NoFreeDeadEnd, respawn, traffic_step
from .world import (
    Pose,
    WorldMap,
    cross_coord,
    lane_cross_offset,
    map_digest,
    surface_rect,
)

CLASHWITHOBSTACLE = "CLASHWITHOBSTACLE"
CLASHWITHOTHERCAR = "CLASHWITHOTHERCAR"
LEAVEROAD = "LEAVEROAD"
CROSSCENTRELINE = "CROSSCENTRELINE"
EVENT_KINDS = (CLASHWITHOBSTACLE, CLASHWITHOTHERCAR, LEAVEROAD, CROSSCENTRELINE)

OUTCOME_TARGET = "TargetReached"
OUTCOME_TIMEOUT = "Timeout"

EVENT_COOLDOWN_STEPS = 50
TARGET_RADIUS = 2.0

RUN_LOG_FORMAT = "sitcov-run/1"


@dataclass(frozen=True)
class RunConfig:
    internal_seed: int
    dt: float = 0.1
    max_steps: int = 20_000
    fault_set: FaultSet = FaultSet.empty()
    record_trajectory: bool = True
    controller: ControllerParams = ControllerParams()
    sensors: SensorParams = SensorParams()

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass(frozen=True)
class AccidentEvent:
    kind: str
    step: int
    x: float
    y: float
    counterpart: str | None  # "parked:<id>", "car:<id>" or None


@dataclass(frozen=True)
class StepRecord:
    step: int
    x: float
    y: float
    heading: float
    mode: str
    cars: tuple[tuple[int, float, float, float], ...]  # (id, x, y, heading)


@dataclass(frozen=True)
class RunResult:
    external_seed: int
    map_digest: str
    config: RunConfig
    events: tuple[AccidentEvent, ...]
    trigger_counts: tuple[tuple[int, int], ...]  # (fault id, count), sorted
    outcome: str
    steps_executed: int
    trajectory: tuple[StepRecord, ...] | None

    def triggers(self) -> dict[int, int]:
        return dict(self.trigger_counts)

    def event_count(self, kind: str | None = None) -> int:
        if kind is None:
            return len(self.events)
        return sum(1 for e in self.events if e.kind == kind)


def config_digest(config: RunConfig) -> str:
    payload = {
        "dt": config.dt,
        "max_steps": config.max_steps,
        "faults": sorted(config.fault_set),
        "controller": vars(config.controller),
        "sensors": {
            k: list(v) if isinstance(v, tuple) else v
            for k, v in vars(config.sensors).items()
        },
    }
    text = json.dumps(payload, sort_keys=True)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]


# ---------------------------------------------------------------------------
# Accident monitors


class AccidentMonitor:
    """Stateful per-run monitor: geometric checks plus event deduplication."""

    def __init__(self, m: WorldMap, vehicle_length: float = 4.0, vehicle_width: float = 2.0):
        self.m = m
        self.vl = vehicle_length
        self.vw = vehicle_width
        self._surfaces = [surface_rect(m, r) for r in m.roads]
        self._parked = [(p.id, p.box()) for p in m.parked]
        self._zones = [(j.x, j.y) for j in m.junctions]
        self._zone_radius = max((r.width for r in m.roads), default=6.0)
        self._last_raise: dict[tuple[str, str | None], int] = {}

    def _cooled(self, kind: str, counterpart: str | None, step: int) -> bool:
        key = (kind, counterpart)
        last = self._last_raise.get(key)
        if last is not None and step - last < EVENT_COOLDOWN_STEPS:
            return False
        self._last_raise[key] = step
        return True

    def step(
        self,
        step: int,
        pose: Pose,
        cars: list[MovingCar],
        mode: str,
    ) -> list[AccidentEvent]:
        """Evaluate all four monitors at the current world state.

        CROSSCENTRELINE is justified (suppressed) while the controller mode
        is Overtaking; junction areas and headings far off the road axis are
        exempt because lane ownership is undefined while turning.
        """
        events: list[AccidentEvent] = []
        ego = OrientedBox(pose.x, pose.y, pose.heading, self.vl, self.vw)
        ego_aabb = ego.aabb()

        for pid, box in self._parked:
            b = box.aabb()
            if ego_aabb.xmax < b.xmin or b.xmax < ego_aabb.xmin:
                continue
            if ego_aabb.ymax < b.ymin or b.ymax < ego_aabb.ymin:
                continue
            if boxes_intersect(ego, box):
                cp = f"parked:{pid}"
                if self._cooled(CLASHWITHOBSTACLE, cp, step):
                    events.append(AccidentEvent(CLASHWITHOBSTACLE, step, pose.x, pose.y, cp))

        for car in cars:
            if boxes_intersect(ego, car.box(self.m)):
                cp = f"car:{car.id}"
                if self._cooled(CLASHWITHOTHERCAR, cp, step):
                    events.append(AccidentEvent(CLASHWITHOTHERCAR, step, pose.x, pose.y, cp))

        on_surface = any(s.contains(pose.x, pose.y) for s in self._surfaces)
        if not on_surface:
            if self._cooled(LEAVEROAD, None, step):
                events.append(AccidentEvent(LEAVEROAD, step, pose.x, pose.y, None))
        elif mode != "Overtaking" and self._crossed_centreline(pose):
            if self._cooled(CROSSCENTRELINE, None, step):
                events.append(AccidentEvent(CROSSCENTRELINE, step, pose.x, pose.y, None))
        return events

    def _crossed_centreline(self, pose: Pose) -> bool:
        for zx, zy in self._zones:
            if math.hypot(pose.x - zx, pose.y - zy) <= self._zone_radius:
                return False
        from .world import road_of_point  # local to avoid cycle at import time

        road = road_of_point(self.m, pose.x, pose.y)
        if road is None:
            return False
        axis_heading = 0.0 if road.axis == "EW" else 0.5 * math.pi
        component = math.cos(pose.heading - axis_heading)
        if abs(component) < 0.5:
            return False  # more than 60 degrees off axis: turning, not driving
        travel_dir = 1 if component > 0 else -1
        own = lane_cross_offset(road, travel_dir)
        c = cross_coord(self.m, road, pose.x, pose.y)
        return c * own < 0.0


def redetect_events(m: WorldMap, trajectory) -> list[AccidentEvent]:
    """Re-run the monitors offline over a stored trajectory."""
    mon = AccidentMonitor(m)
    out: list[AccidentEvent] = []
    for rec in trajectory:
        cars = [
            _ReplayCar(cid, x, y, heading) for cid, x, y, heading in rec.cars
        ]
        out.extend(mon.step(rec.step, Pose(rec.x, rec.y, rec.heading), cars, rec.mode))
    return out


class _ReplayCar:
    """Stand-in for MovingCar when re-running monitors from a trajectory."""

    def __init__(self, cid: int, x: float, y: float, heading: float):
        self.id = cid
        self._box = OrientedBox(x, y, heading, 4.0, 2.0)

    def box(self, _m) -> OrientedBox:
        return self._box


# ---------------------------------------------------------------------------
# The run loop


def spawn_initial_cars(m: WorldMap, gen_config: GenConfig | None = None) -> list[MovingCar]:
    return [
        MovingCar(i, rid, lane_dir, s)
        for i, (rid, lane_dir, s) in enumerate(initial_moving_car_poses(m, gen_config))
    ]


def run(
    m: WorldMap,
    config: RunConfig,
    initial_cars: list[MovingCar] | None = None,
) -> RunResult:
    """Execute one simulation run; deterministic in (map, config).

    `initial_cars` overrides the map-derived traffic placement; fixtures use
    it to stage exact scenarios.
    """
    nav_rng = SeededRng(derive_seed(config.internal_seed, STREAM_NAV))
    traffic_rng = SeededRng(derive_seed(config.internal_seed, STREAM_TRAFFIC))
    controller = CarController(
        m, nav_rng, config.fault_set, config.controller, config.sensors
    )
    monitor = AccidentMonitor(
        m, config.controller.vehicle_length, config.controller.vehicle_width
    )
    cars = list(initial_cars) if initial_cars is not None else spawn_initial_cars(m)
    next_car_id = max((c.id for c in cars), default=-1) + 1
    target_population = max(m.moving_car_count, len(cars))

    events: list[AccidentEvent] = []
    trajectory: list[StepRecord] = []
    outcome = OUTCOME_TIMEOUT
    steps_executed = 0
    pose = m.ego_start
    dt = config.dt

    for step in range(1, config.max_steps + 1):
        steps_executed = step
        readings = controller.sense(cars)
        act = controller.control_step(readings, dt)

        heading = norm_heading(pose.heading + act.steer * dt)
        x = pose.x + act.speed * dt * math.cos(heading)
        y = pose.y + act.speed * dt * math.sin(heading)
        pose = Pose(x, y, heading)
        controller.state.pose = pose

        new_cars: list[MovingCar] = []
        for car in cars:
            others = tuple(new_cars) + tuple(c for c in cars if c.id > car.id)
            stepped = traffic_step(car, m, traffic_rng, dt, others)
            if stepped is not DEPARTED:
                new_cars.append(stepped)
        cars = new_cars
        while len(cars) < target_population:
            occupied = [c.box(m) for c in cars]
            occupied.append(OrientedBox(pose.x, pose.y, pose.heading, 4.0, 2.0))
            try:
                cars.append(respawn(m, traffic_rng, occupied, next_car_id))
                next_car_id += 1
            except NoFreeDeadEnd:
                break  # deferred: try again next step

        mode = controller.state.mode
        events.extend(monitor.step(step, pose, cars, mode))
        if config.record_trajectory:
            trajectory.append(
                StepRecord(
                    step, pose.x, pose.y, pose.heading, mode,
                    tuple((c.id, *c.position(m), c.heading(m)) for c in cars),
                )
            )

        if math.hypot(pose.x - m.target.x, pose.y - m.target.y) <= TARGET_RADIUS:
            outcome = OUTCOME_TARGET
            break

    return RunResult(
        external_seed=m.external_seed,
        map_digest=map_digest(m),
        config=config,
        events=tuple(events),
        trigger_counts=tuple(sorted(controller.state.triggers.counts.items())),
        outcome=outcome,
        steps_executed=steps_executed,
        trajectory=tuple(trajectory) if config.record_trajectory else None,
    )


def replay(
    external_seed: int,
    config: RunConfig,
    gen_config: GenConfig | None = None,
) -> RunResult:
    """Regenerate the map from its external seed and run it."""
    m = generate_map(external_seed, gen_config)
    return run(m, config)


# ---------------------------------------------------------------------------
# Run log format (line oriented, bit-exact)


def emit_run_log(result: RunResult) -> str:
    lines = [
        RUN_LOG_FORMAT,
        f"external_seed={result.external_seed}",
        f"map_digest={result.map_digest}",
        f"internal_seed={result.config.internal_seed}",
        f"dt={result.config.dt!r}",
        f"max_steps={result.config.max_steps}",
        f"faults={','.join(str(f) for f in sorted(result.config.fault_set))}",
        f"config_digest={config_digest(result.config)}",
    ]
    for e in result.events:
        cp = e.counterpart if e.counterpart is not None else "-"
        lines.append(
            f"event step={e.step} kind={e.kind} x={e.x!r} y={e.y!r} counterpart={cp}"
        )
    for fid, count in result.trigger_counts:
        lines.append(f"trigger fault={fid} count={count}")
    lines.append(f"outcome={result.outcome}")
    lines.append(f"steps={result.steps_executed}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class RunLogRecord:
    """The serialisable face of a RunResult: everything but the trajectory."""

    external_seed: int
    map_digest: str
    internal_seed: int
    dt: float
    max_steps: int
    faults: tuple[int, ...]
    config_digest: str
    events: tuple[AccidentEvent, ...]
    trigger_counts: tuple[tuple[int, int], ...]
    outcome: str
    steps_executed: int


def log_record(result: RunResult) -> RunLogRecord:
    return RunLogRecord(
        external_seed=result.external_seed,
        map_digest=result.map_digest,
        internal_seed=result.config.internal_seed,
        dt=result.config.dt,
        max_steps=result.config.max_steps,
        faults=tuple(sorted(result.config.fault_set)),
        config_digest=config_digest(result.config),
        events=result.events,
        trigger_counts=result.trigger_counts,
        outcome=result.outcome,
        steps_executed=result.steps_executed,
    )


def parse_run_log(text: str) -> RunLogRecord:
    lines = text.splitlines()
    if not lines or lines[0] != RUN_LOG_FORMAT:
        raise ValueError("not a run log")
    header: dict[str, str] = {}
    events: list[AccidentEvent] = []
    triggers: list[tuple[int, int]] = []
    for line in lines[1:]:
        if line.startswith("event "):
            fields = dict(kv.split("=", 1) for kv in line[len("event "):].split(" "))
            cp = None if fields["counterpart"] == "-" else fields["counterpart"]
            events.append(
                AccidentEvent(
                    fields["kind"], int(fields["step"]),
                    float(fields["x"]), float(fields["y"]), cp,
                )
            )
        elif line.startswith("trigger "):
            fields = dict(kv.split("=", 1) for kv in line[len("trigger "):].split(" "))
            triggers.append((int(fields["fault"]), int(fields["count"])))
        elif "=" in line:
            k, v = line.split("=", 1)
            header[k] = v
    faults = tuple(int(f) for f in header["faults"].split(",") if f)
    return RunLogRecord(
        external_seed=int(header["external_seed"]),
        map_digest=header["map_digest"],
        internal_seed=int(header["internal_seed"]),
        dt=float(header["dt"]),
        max_steps=int(header["max_steps"]),
        faults=faults,
        config_digest=header["config_digest"],
        events=tuple(events),
        trigger_counts=tuple(triggers),
        outcome=header["outcome"],
        steps_executed=int(header["steps"]),
    )


def trajectory_csv(result: RunResult) -> str:
    """Per-step ego trace: step, x, y, heading, mode."""
    if result.trajectory is None:
        raise ValueError("run was executed without trajectory recording")
    lines = ["step,x,y,heading,mode"]
    for rec in result.trajectory:
        lines.append(f"{rec.step},{rec.x!r},{rec.y!r},{rec.heading!r},{rec.mode}")
    return "\n".join(lines) + "\n"

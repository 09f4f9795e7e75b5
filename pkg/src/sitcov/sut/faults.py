"""Seeded-fault catalogue, fault sets and trigger logging.

Each catalogued fault is a deliberately injected, toggleable defect with a
known hook site in the controller.  A fault "triggers" whenever its mutated
code path actually executes; triggers are counted per occurrence in the
run's TriggerLog.  Whether a triggered fault was *found* is the experiment
layer's business, not the controller's.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class Fault:
    id: int
    description: str
    hook: str


FAULT_CATALOGUE: dict[int, Fault] = {
    f.id: f
    for f in (
        Fault(
            2,
            "When creating a waypoint (a point which the AR will steer towards), "
            "misplace it slightly northeast",
            hook="waypoint creation",
        ),
        Fault(
            4,
            "When creating a waypoint, misplace it slightly southeast",
            hook="waypoint creation",
        ),
        Fault(
            8,
            "Remove the first half of the scan arc for road markings",
            hook="road-marking scan",
        ),
        Fault(
            10,
            "Halve visual resolution when searching for road markings",
            hook="road-marking scan",
        ),
        Fault(
            12,
            "Halve the range of the scan for road markings",
            hook="road-marking scan",
        ),
        Fault(
            17,
            "Fail to keep turning towards the current waypoint when overtaking",
            hook="overtake steering",
        ),
        Fault(
            18,
            "While overtaking, look for obstacles only in direction of current "
            "heading, not in intended direction of travel",
            hook="overtake clearance check",
        ),
    )
}

FAULT_IDS: tuple[int, ...] = tuple(sorted(FAULT_CATALOGUE))


class FaultSet(frozenset):
    """Set of enabled fault ids; the empty set is the nominal controller."""

    def __new__(cls, ids=()):
        ids = frozenset(ids)
        unknown = ids - set(FAULT_CATALOGUE)
        if unknown:
            raise ValueError(f"unknown fault ids: {sorted(unknown)}")
        return super().__new__(cls, ids)

    @classmethod
    def empty(cls) -> "FaultSet":
        return cls()

    @classmethod
    def single(cls, fid: int) -> "FaultSet":
        return cls((fid,))


@dataclass
class TriggerLog:
    """Per-run fault trigger counter; counts never decrease within a run."""

    counts: dict[int, int] = field(default_factory=dict)

    def record(self, fault_id: int, n: int = 1) -> None:
        if n > 0:
            self.counts[fault_id] = self.counts.get(fault_id, 0) + n

    def count(self, fault_id: int) -> int:
        return self.counts.get(fault_id, 0)

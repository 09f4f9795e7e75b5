"""The autonomous-car controller under test.

``faults``     the seeded-fault catalogue, fault sets and trigger logging
``sensors``    road-marking scanner, obstacle scanner, prediction helpers
``controller`` navigation, waypoint steering, overtaking, fault hooks
"""

from .controller import (  # noqa: F401
    Actuation,
    CarController,
    ControllerParams,
    ControllerState,
    choose_road_at_junction,
    next_waypoint,
)
from .faults import FAULT_CATALOGUE, Fault, FaultSet, TriggerLog  # noqa: F401
from .sensors import (  # noqa: F401
    Detection,
    MarkingHit,
    SensorParams,
    InsufficientHistory,
    predict_hidden_extension,
    predict_trajectory,
    scan_obstacles,
    scan_road_markings,
)

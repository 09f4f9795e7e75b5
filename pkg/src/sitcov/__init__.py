"""sitcov: deterministic road-world simulation and situation-coverage testing.

Subsystems:

- ``world``      static map model, validity checks, path queries
- ``mapgen``     seeded random map generation
- ``sut``        the autonomous-car controller under test, with its fault
                 catalogue, sensor models and navigation logic
- ``traffic``    moving obstacle cars
- ``sim``        the discrete-time run engine, accident monitors and logs
- ``coverage``   situation criteria and the 216-cell coverage tracker
- ``testgen``    coverage-filtered and random campaign engines
- ``experiment`` the fault-sweep protocol, measures and regression analysis
- ``cli``        command-line front end
"""

__version__ = "0.1.0"

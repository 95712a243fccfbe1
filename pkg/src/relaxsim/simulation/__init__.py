"""Two-lane mainline with an on-ramp merge."""

from .network import ConfigError, RoadNetwork, Schedule, SimConfig
from .world import (DET_COLUMNS, EVENT_COLUMNS, TRAJ_COLUMNS, SimResult, Vehicle, World,
                    read_detectors, read_trajectories, run)
from .engine import (EV_COLLISION, EV_EXIT, EV_LANE_CHANGE, EV_NO_SLOT, EV_RELAX, EV_SPAWN,
                     NO_LEADER, WALL)

__all__ = ["ConfigError", "RoadNetwork", "Schedule", "SimConfig", "SimResult", "Vehicle", "World",
           "run", "read_detectors", "read_trajectories", "TRAJ_COLUMNS", "DET_COLUMNS",
           "EVENT_COLUMNS", "EV_SPAWN", "EV_EXIT", "EV_LANE_CHANGE", "EV_COLLISION", "EV_RELAX",
           "EV_NO_SLOT", "NO_LEADER", "WALL"]

"""Trajectory-level calibration of car following and relaxation parameters."""

from .dataset import (COLUMNS, NGSIM_COLUMNS, NO_LEADER, DatasetError, TrajectoryDataset,
                      VehicleTrack, read_ngsim)
from .ga import (CalibrationResult, GAConfig, GAResult, calibrate_dataset, ga_calibrate,
                 ga_minimize, vehicle_rng, write_results)
from .metrics import GroupStats, MetricsReport, metrics_report, near_lc_errors, write_metrics
from .replay import (CF_BOUNDS, RELAX_BOUNDS, RELAX_MODES, CalibrationError, CalibrationProblem,
                     Replay, Replayer, acceleration_bounds, mse_position, prepare_replay,
                     realistic_acceleration, recorded_acceleration, replay_simulate)
from .synthetic import SyntheticScenario, make_synthetic_dataset

"""Road geometry, inflow schedules and run configuration."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from ..cf_models import CFParams
from ..lane_changing import LCParams
from ..relaxation import RelaxationConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RoadNetwork:
    """Mainline lanes numbered 0 (leftmost) to ``n_lanes - 1``; the ramp is lane ``n_lanes``.

    The ramp runs from ``ramp_start`` to ``merge_end`` alongside the rightmost
    mainline lane and vehicles on it may merge inside ``[merge_start, merge_end]``.
    Detectors sit on the mainline only.
    """

    length: float = 3000.0
    n_lanes: int = 2
    merge_start: float = 1800.0
    merge_end: float = 2100.0
    ramp_start: float = 1500.0
    detectors: tuple[float, ...] = (1400.0, 1950.0, 2800.0)
    has_ramp: bool = True

    def __post_init__(self):
        object.__setattr__(self, "detectors", tuple(float(x) for x in self.detectors))
        if self.length <= 0 or self.n_lanes < 1:
            raise ConfigError("need a positive road length and at least one lane")
        if self.has_ramp:
            if not self.merge_end > self.merge_start:
                raise ConfigError("merge_end must exceed merge_start")
            if not 0 <= self.ramp_start <= self.merge_start or self.merge_end > self.length:
                raise ConfigError("ramp must satisfy 0 <= ramp_start <= merge_start < merge_end <= length")
        for x in self.detectors:
            if not 0 < x < self.length:
                raise ConfigError(f"detector at {x} m lies outside the road")

    @property
    def ramp_lane(self) -> int:
        return self.n_lanes

    @property
    def n_total_lanes(self) -> int:
        return self.n_lanes + (1 if self.has_ramp else 0)

    def lane_start(self, lane: int) -> float:
        return self.ramp_start if self.has_ramp and lane == self.ramp_lane else 0.0


@dataclass(frozen=True)
class Schedule:
    """Piecewise-linear inflow in veh/hr against time in s, constant outside the knots."""

    times: tuple[float, ...] = (0.0,)
    rates: tuple[float, ...] = (0.0,)

    def __post_init__(self):
        t = tuple(float(x) for x in self.times)
        r = tuple(float(x) for x in self.rates)
        if not t or len(t) != len(r):
            raise ConfigError("schedule needs matching, nonempty times and rates")
        if any(b < a for a, b in zip(t, t[1:])):
            raise ConfigError("schedule times must be nondecreasing")
        if any(x < 0 or not np.isfinite(x) for x in r):
            raise ConfigError("inflow rates must be finite and nonnegative")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "rates", r)

    @classmethod
    def constant(cls, rate: float) -> "Schedule":
        return cls((0.0,), (rate,))

    @classmethod
    def ramp(cls, t0: float, t1: float, r0: float, r1: float) -> "Schedule":
        """``r0`` until ``t0``, linear to ``r1`` at ``t1``, constant afterwards."""
        return cls((t0, t1), (r0, r1))

    def rate_at(self, t) -> np.ndarray:
        return np.interp(t, self.times, self.rates)

    @property
    def is_zero(self) -> bool:
        return max(self.rates) == 0

    def shifted(self, scale: float = 1.0) -> "Schedule":
        return Schedule(self.times, tuple(scale * r for r in self.rates))


InflowSpec = Union[Schedule, float]


def _as_schedule(x: InflowSpec) -> Schedule:
    return x if isinstance(x, Schedule) else Schedule.constant(float(x))


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.1
    horizon: float = 3600.0
    network: RoadNetwork = field(default_factory=RoadNetwork)
    mainline_inflow: tuple = (0.0,)
    onramp_inflow: InflowSpec = 0.0
    b1: float = 0.8
    b2: float = 18.85
    seed: int = 0
    relax: RelaxationConfig = field(default_factory=RelaxationConfig)
    lc: LCParams = field(default_factory=LCParams)
    cf: CFParams = field(default_factory=CFParams.idm)
    vehicle_length: float = 3.0
    record_every: int = 1
    lane_changing: bool = True
    capacity: int = 2048

    def __post_init__(self):
        main = self.mainline_inflow
        if isinstance(main, (Schedule, int, float)):
            main = (main,)
        main = tuple(_as_schedule(x) for x in main)
        if len(main) == 1:
            main = main * self.network.n_lanes
        if len(main) != self.network.n_lanes:
            raise ConfigError(f"{len(main)} mainline schedules for {self.network.n_lanes} lanes")
        object.__setattr__(self, "mainline_inflow", main)
        object.__setattr__(self, "onramp_inflow", _as_schedule(self.onramp_inflow))
        if not self.dt > 0 or not self.horizon >= 0:
            raise ConfigError("need dt > 0 and horizon >= 0")
        if not 0 < self.b1 <= 1 or self.b2 < 0:
            raise ConfigError("need 0 < b1 <= 1 and b2 >= 0")
        if self.vehicle_length <= 0:
            raise ConfigError("vehicle length must be positive")
        if self.record_every < 0 or self.capacity < 1:
            raise ConfigError("record_every >= 0 and capacity >= 1 required")
        if not self.network.has_ramp and not self.onramp_inflow.is_zero:
            raise ConfigError("on-ramp inflow given for a network without a ramp")

    @property
    def schedules(self) -> tuple[Schedule, ...]:
        """One schedule per lane including the ramp when present."""
        out = list(self.mainline_inflow)
        if self.network.has_ramp:
            out.append(self.onramp_inflow)
        return tuple(out)

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

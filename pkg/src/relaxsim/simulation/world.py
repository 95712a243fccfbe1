"""Python side of the engine: allocation, scripted vehicles, log collection."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from ..cf_models import CFParams
from ..relaxation import RelaxationEvent, RelaxationState
from . import engine as E
from .network import ConfigError, SimConfig

MAX_EVENTS_PER_VEHICLE = 32
_CHUNK_STEPS = 600

TRAJ_COLUMNS = ("t", "veh_id", "lane", "pos", "speed", "accel")
DET_COLUMNS = ("detector_id", "t", "veh_id", "speed", "lane")
EVENT_COLUMNS = ("t", "kind", "veh_id", "a", "b")
EVENT_KINDS = {E.EV_SPAWN: "spawn", E.EV_EXIT: "exit", E.EV_LANE_CHANGE: "lane_change",
               E.EV_COLLISION: "collision", E.EV_RELAX: "relax", E.EV_NO_SLOT: "no_slot"}


@dataclass
class Vehicle:
    """Snapshot of one vehicle. ``pos`` is the front bumper."""

    id: int
    lane: int
    pos: float
    speed: float
    accel: float
    length: float
    cf_params: CFParams
    relaxation: RelaxationState
    lc_mode: int
    cooldown: int
    leader: Optional[int]
    follower: Optional[int]
    entry_time: float
    fixed_speed: Optional[float] = None


@dataclass
class SimResult:
    """Logs of one run. Arrays follow ``TRAJ_COLUMNS``, ``DET_COLUMNS`` and ``EVENT_COLUMNS``."""

    config: SimConfig
    trajectories: np.ndarray
    detectors: np.ndarray
    events: np.ndarray
    t_end: float
    stats: dict = field(default_factory=dict)

    def detector(self, det_id: int, lanes=None) -> np.ndarray:
        d = self.detectors[self.detectors[:, 0] == det_id]
        if lanes is not None:
            d = d[np.isin(d[:, 4], lanes)]
        return d

    def events_of(self, kind: int) -> np.ndarray:
        return self.events[self.events[:, 1] == kind]

    @property
    def n_collisions(self) -> int:
        return int(np.count_nonzero(self.events[:, 1] == E.EV_COLLISION))

    def write_trajectories(self, path) -> Path:
        return _write_csv(path, TRAJ_COLUMNS, self.trajectories, (6, 0, 0, 4, 4, 5))

    def write_detectors(self, path) -> Path:
        return _write_csv(path, DET_COLUMNS, self.detectors, (0, 4, 0, 4, 0))

    def write_events(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(EVENT_COLUMNS)
            for row in self.events:
                w.writerow([f"{row[0]:.4f}", EVENT_KINDS.get(int(row[1]), int(row[1])), int(row[2]),
                            f"{row[3]:.6g}", f"{row[4]:.6g}"])
        return path


def _write_csv(path, header, arr, decimals) -> Path:
    path = Path(path)
    fmt = ",".join("%d" if d == 0 else f"%.{d}f" for d in decimals)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        if len(arr):
            np.savetxt(fh, arr, fmt=fmt)
    return path


def read_trajectories(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def read_detectors(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


class World:
    """Mutable simulation state.

    ``step``/``run`` advance it; ``insert_vehicle`` places scripted or
    model-driven vehicles directly.  Runs are deterministic given the config
    (including its seed).
    """

    def __init__(self, config: SimConfig):
        self.config = cfg = config
        net = cfg.network
        n = cfg.capacity
        self._rng = np.random.default_rng(cfg.seed)
        self._kind = cfg.cf.code
        self._p = cfg.cf.packed.copy()
        c_s, c_v = cfg.relax.durations
        g = np.zeros(E.NG)
        g[E.G_DT] = cfg.dt
        g[E.G_CS], g[E.G_CV] = c_s, c_v
        g[E.G_POSONLY] = float(cfg.relax.positive_only)
        g[E.G_SAFEGUARD] = float(cfg.relax.safeguard)
        g[E.G_ALPHA] = cfg.relax.safeguard_alpha
        g[E.G_BETA] = cfg.relax.safeguard_beta
        g[E.G_EPS] = cfg.relax.safeguard_eps
        g[E.G_LENGTH] = net.length
        g[E.G_RAMP_START] = net.ramp_start
        g[E.G_MERGE_START] = net.merge_start
        g[E.G_MERGE_END] = net.merge_end
        g[E.G_B1], g[E.G_B2] = cfg.b1, cfg.b2
        g[E.G_NLANES] = net.n_lanes
        g[E.G_HAS_RAMP] = float(net.has_ramp)
        g[E.G_VLEN] = cfg.vehicle_length
        g[E.G_LC] = float(cfg.lane_changing)
        g[E.G_RECORD] = cfg.record_every
        g[E.G_RELAX] = float(cfg.relax.enabled)
        self._g = g
        self._lcp = cfg.lc.packed()
        self._det_x = np.asarray(net.detectors, dtype=float)
        scheds = cfg.schedules
        width = max(len(s.times) for s in scheds)
        self._sched_t = np.empty((len(scheds), width))
        self._sched_q = np.empty((len(scheds), width))
        for k, s in enumerate(scheds):
            pad = width - len(s.times)
            self._sched_t[k] = list(s.times) + [s.times[-1] + 1.0 + j for j in range(pad)]
            self._sched_q[k] = [r / 3600.0 for r in s.rates] + [s.rates[-1] / 3600.0] * pad
        self._buffers = np.zeros(len(scheds))
        self._ist = np.zeros((n, E.NI), dtype=np.int64)
        self._fst = np.zeros((n, E.NF))
        self._fst[:, E.FIXED] = np.nan
        self._rel = np.zeros((5, n, MAX_EVENTS_PER_VEHICLE))
        self._ev_n = np.zeros(n, dtype=np.int64)
        self._order = np.zeros(n, dtype=np.int64)
        self._lane_begin = np.zeros(net.n_total_lanes + 1, dtype=np.int64)
        self._free = np.arange(n - 1, -1, -1, dtype=np.int64)
        self._key = np.zeros(n)
        self._idx = np.zeros(n, dtype=np.int64)
        self._touched = np.zeros(n, dtype=np.bool_)
        self._scratch = [np.zeros(n) for _ in range(4)]
        self._cnt = np.zeros(E.NC, dtype=np.int64)
        self._cnt[E.C_NFREE] = n
        self._stop = np.zeros(1, dtype=np.bool_)
        rec = cfg.record_every
        per_chunk = _CHUNK_STEPS // rec + 1 if rec else 0
        self._traj = np.zeros((per_chunk * 400 if rec else 0, 6))
        self._detlog = np.zeros((max(200000, 4 * n * max(len(self._det_x), 1)), 5))
        self._evlog = np.zeros((max(100000, 8 * n + 64), 5))
        self._rng_buf = self._rng.random(max(200000, 4 * n + 4))
        self._chunks: dict[str, list] = {"traj": [], "det": [], "ev": []}

    # ------------------------------------------------------------------ state
    @property
    def step_index(self) -> int:
        return int(self._cnt[E.C_STEP])

    @property
    def t(self) -> float:
        return self.step_index * self.config.dt

    @property
    def n_vehicles(self) -> int:
        return int(self._cnt[E.C_NACTIVE])

    @property
    def counters(self) -> dict:
        c = self._cnt
        return {"spawned": int(c[E.C_SPAWNED]), "exited": int(c[E.C_EXITED]),
                "active": int(c[E.C_NACTIVE]), "collisions": int(c[E.C_COLLISIONS]),
                "lane_changes": int(c[E.C_CHANGES]), "steps": int(c[E.C_STEP])}

    def insert_vehicle(self, lane: int, pos: float, speed: float,
                       fixed_speed: Optional[float] = None, length: Optional[float] = None) -> int:
        """Place a vehicle directly; ``fixed_speed`` makes it ignore the model."""
        net = self.config.network
        if not 0 <= lane < net.n_total_lanes:
            raise ConfigError(f"no lane {lane}")
        if speed < 0:
            raise ConfigError("speed must be nonnegative")
        c = self._cnt
        if c[E.C_NFREE] == 0:
            raise ConfigError("vehicle capacity exhausted")
        c[E.C_NFREE] -= 1
        i = int(self._free[c[E.C_NFREE]])
        self._ist[i] = 0
        self._ist[i, [E.PARTNER, E.LEADER, E.FOLLOWER, E.PREV, E.TARGET]] = -1
        self._ist[i, E.ACTIVE] = 1
        self._ist[i, E.VID] = c[E.C_NEXTVID]
        self._ist[i, E.LANE] = lane
        self._fst[i] = 0.0
        self._fst[i, E.POS] = pos
        self._fst[i, E.SPD] = speed
        self._fst[i, E.LEN] = self.config.vehicle_length if length is None else length
        self._fst[i, E.FIXED] = np.nan if fixed_speed is None else fixed_speed
        self._fst[i, E.ENTRY] = self.t
        self._ev_n[i] = 0
        c[E.C_NEXTVID] += 1
        c[E.C_NACTIVE] += 1
        c[E.C_SPAWNED] += 1
        return int(self._ist[i, E.VID])

    def _slot(self, vid: int) -> int:
        hits = np.nonzero((self._ist[:, E.ACTIVE] == 1) & (self._ist[:, E.VID] == vid))[0]
        if not len(hits):
            raise KeyError(f"vehicle {vid} not on the road")
        return int(hits[0])

    def set_fixed_speed(self, vid: int, speed: Optional[float]) -> None:
        self._fst[self._slot(vid), E.FIXED] = np.nan if speed is None else speed

    def vehicles(self) -> list[Vehicle]:
        out = []
        ist, fst = self._ist, self._fst
        for i in np.nonzero(ist[:, E.ACTIVE] == 1)[0]:
            evs = [RelaxationEvent(*self._rel[:, i, k]) for k in range(self._ev_n[i])]

            def vid_of(j):
                return int(ist[j, E.VID]) if j >= 0 else None

            fixed = fst[i, E.FIXED]
            out.append(Vehicle(int(ist[i, E.VID]), int(ist[i, E.LANE]), float(fst[i, E.POS]),
                               float(fst[i, E.SPD]), float(fst[i, E.ACC]), float(fst[i, E.LEN]),
                               self.config.cf, RelaxationState(evs), int(ist[i, E.MODE]),
                               int(ist[i, E.COOL]), vid_of(ist[i, E.LEADER]),
                               vid_of(ist[i, E.FOLLOWER]), float(fst[i, E.ENTRY]),
                               None if math.isnan(fixed) else float(fixed)))
        return sorted(out, key=lambda v: v.id)

    # ---------------------------------------------------------------- running
    def _drain(self) -> None:
        c = self._cnt
        for name, buf, col in (("traj", self._traj, E.C_NTRAJ), ("det", self._detlog, E.C_NDET),
                               ("ev", self._evlog, E.C_NEV)):
            if c[col]:
                self._chunks[name].append(buf[:c[col]].copy())
                c[col] = 0
        if c[E.C_RNG] > self._rng_buf.shape[0] // 2:
            self._rng_buf = self._rng.random(self._rng_buf.shape[0])
            c[E.C_RNG] = 0

    def step(self, n: int = 1) -> int:
        """Advance ``n`` steps. Returns steps done (always ``n``)."""
        done = 0
        while done < n:
            k = E.run_kernel(n - done, self._kind, self._p, self._g, self._lcp, self._det_x,
                             self._sched_t, self._sched_q, self._buffers, self._ist, self._fst,
                             self._rel, self._ev_n, self._order, self._lane_begin, self._free,
                             self._key, self._idx, self._touched, *self._scratch, self._traj,
                             self._detlog, self._evlog, self._rng_buf, self._cnt, self._stop)
            done += k
            self._drain()
            if k == 0 and done < n:
                self._grow()
        return done

    def _grow(self) -> None:
        # a single step did not fit: enlarge the buffers
        self._traj = np.zeros((max(2 * len(self._traj), 4 * self.config.capacity), 6))
        self._detlog = np.zeros((2 * len(self._detlog), 5))
        self._evlog = np.zeros((2 * len(self._evlog), 5))
        self._rng_buf = self._rng.random(2 * len(self._rng_buf))
        self._cnt[E.C_RNG] = 0

    def run(self, until: Optional[float] = None,
            callback: Optional[Callable[["World"], bool]] = None,
            check_every: float = 60.0) -> SimResult:
        """Run to ``until`` (default: the config horizon).

        ``callback`` is called every ``check_every`` simulated seconds and may
        return True to stop early.
        """
        until = self.config.horizon if until is None else until
        target = int(round(until / self.config.dt))
        chunk = max(1, int(round(check_every / self.config.dt)))
        while self.step_index < target:
            self.step(min(chunk, target - self.step_index))
            if callback is not None and callback(self):
                break
        return self.result()

    def detector_log(self) -> np.ndarray:
        return _cat(self._chunks["det"], 5)

    def result(self) -> SimResult:
        return SimResult(self.config, _cat(self._chunks["traj"], 6), _cat(self._chunks["det"], 5),
                         _cat(self._chunks["ev"], 5), self.t, self.counters)


def _cat(chunks, width) -> np.ndarray:
    if not chunks:
        return np.zeros((0, width))
    if len(chunks) > 1:
        merged = np.concatenate(chunks)
        chunks[:] = [merged]
    return chunks[0]


def run(config: SimConfig, **kw) -> SimResult:
    return World(config).run(**kw)

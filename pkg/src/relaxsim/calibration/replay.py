"""Replay a recorded follower behind its recorded leaders under candidate parameters."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..cf_models import PARAM_NAMES, CFParams, ModelKind
from ..dynamics import follow_kernel
from ..relaxation import RelaxationConfig
from .dataset import NO_LEADER, DatasetError, TrajectoryDataset

RELAX_MODES = ("none", "1p", "2p", "ska")
RELAX_PARAM_NAMES = {"none": (), "1p": ("c",), "2p": ("c_s", "c_v"), "ska": ("T0", "tau")}

CF_BOUNDS = {
    ModelKind.IDM: ((20.0, 40.0), (0.2, 3.0), (0.5, 10.0), (0.3, 5.0), (0.5, 6.0)),
    # speed scale, 1/m, shift, sensitivity, shift
    ModelKind.OVM: ((5.0, 40.0), (0.02, 0.5), (0.1, 3.0), (0.1, 3.0), (0.01, 2.0)),
    ModelKind.NEWELL: ((1.0, 15.0), (0.3, 3.0), (15.0, 40.0)),
}
RELAX_BOUNDS = {"none": (), "1p": ((0.1, 60.0),), "2p": ((0.1, 60.0), (0.1, 60.0)),
                "ska": ((0.1, 3.0), (0.1, 60.0))}


class CalibrationError(RuntimeError):
    pass


def parse_relax_mode(name: str) -> str:
    key = str(name).strip().lower()
    key = {"0": "none", "off": "none", "1": "1p", "2": "2p"}.get(key, key)
    if key not in RELAX_MODES:
        raise ValueError(f"unknown relaxation mode {name!r}; choose from {', '.join(RELAX_MODES)}")
    return key


@dataclass(frozen=True)
class CalibrationProblem:
    """Which vehicle to fit, under which model, and the search box."""

    vehicle_id: int
    model: ModelKind
    relax_mode: str
    bounds: tuple

    def __post_init__(self):
        object.__setattr__(self, "model", ModelKind.parse(self.model))
        object.__setattr__(self, "relax_mode", parse_relax_mode(self.relax_mode))
        b = np.asarray(self.bounds, dtype=float)
        if b.ndim != 2 or b.shape != (len(self.names), 2):
            raise ValueError(f"need {len(self.names)} (low, high) bounds for {self.names}")
        if not np.all(np.isfinite(b)) or np.any(b[:, 1] <= b[:, 0]):
            raise ValueError("bounds must be finite with low < high")
        object.__setattr__(self, "bounds", tuple(map(tuple, b)))

    @classmethod
    def build(cls, vehicle_id: int, model="IDM", relax_mode="1p", bounds=None):
        model = ModelKind.parse(model)
        relax_mode = parse_relax_mode(relax_mode)
        if bounds is None:
            if model not in CF_BOUNDS:
                raise ValueError(f"no default bounds for {model.name}")
            bounds = CF_BOUNDS[model] + RELAX_BOUNDS[relax_mode]
        return cls(vehicle_id, model, relax_mode, tuple(bounds))

    @property
    def names(self) -> tuple[str, ...]:
        return PARAM_NAMES[self.model] + RELAX_PARAM_NAMES[self.relax_mode]

    @property
    def n_cf(self) -> int:
        return len(PARAM_NAMES[self.model])

    @property
    def bounds_array(self) -> np.ndarray:
        return np.asarray(self.bounds, dtype=float)


@dataclass
class ReplayInputs:
    """Everything the replay needs for one vehicle, extracted once from the data."""

    vid: int
    dt: float
    t0: float
    x0: float
    v0: float
    lead_rear: np.ndarray
    lead_speed: np.ndarray
    ev_tlc: np.ndarray
    ev_gs: np.ndarray
    ev_gv: np.ndarray
    ev_merge: np.ndarray
    ev_frame: np.ndarray
    ev_new_rear: np.ndarray
    ev_new_speed: np.ndarray
    rec_pos: np.ndarray
    rec_speed: np.ndarray

    @property
    def n(self) -> int:
        return len(self.rec_pos)

    @property
    def events(self):
        return (self.ev_tlc, self.ev_gs, self.ev_gv, self.ev_merge, self.ev_frame,
                self.ev_new_rear, self.ev_new_speed)


def _leader_state(ds: TrajectoryDataset, lid: int, frame: int):
    tr = ds.tracks.get(int(lid))
    if tr is None or not tr.covers(frame):
        return None
    i = frame - tr.frame0
    return tr.pos[i] - tr.length, tr.speed[i]


def prepare_replay(ds: TrajectoryDataset, vid: int) -> ReplayInputs:
    """Extract leader boundary data and leader-change events for ``vid``.

    A leader change whose first new-leader frame is ``k`` has ``k - 1`` as its
    last frame with the old leader.  Amounts come from the recorded leaders at
    ``k`` (or ``k - 1`` when one of them is not recorded at ``k``); without an
    old leader the merge rule applies inside the replay.
    """
    tr = ds.tracks[vid]
    bad = ds.missing_leader_frames(vid)
    if len(bad):
        f = int(tr.frame0 + bad[0])
        raise DatasetError(f"vehicle {vid}: leader {int(tr.leader[bad[0]])} not recorded at "
                           f"t={f * ds.dt:g} s")
    n = tr.n
    rear = np.full(n, np.nan)
    speed = np.zeros(n)
    for i, lid in enumerate(tr.leader):
        if lid != NO_LEADER:
            rear[i], speed[i] = _leader_state(ds, lid, tr.frame0 + i)
    evs = []
    for k in tr.lc_indices():
        old, new = int(tr.leader[k - 1]), int(tr.leader[k])
        if new == NO_LEADER:
            continue
        f = tr.frame0 + int(k)
        t_lc = (f - 1) * ds.dt
        new_rear, new_speed = rear[k], speed[k]
        gam = None
        if old != NO_LEADER:
            for g in (f, f - 1):
                o, nw = _leader_state(ds, old, g), _leader_state(ds, new, g)
                if o is not None and nw is not None:
                    gam = (o[0] - nw[0], o[1] - nw[1])
                    break
        if gam is None:
            evs.append((t_lc, 0.0, 0.0, True, k - 1, new_rear, new_speed))
        else:
            evs.append((t_lc, gam[0], gam[1], False, k - 1, new_rear, new_speed))
    cols = list(zip(*evs)) if evs else [()] * 7
    return ReplayInputs(
        vid, ds.dt, tr.frame0 * ds.dt, float(tr.pos[0]), float(tr.speed[0]), rear, speed,
        np.asarray(cols[0], dtype=float), np.asarray(cols[1], dtype=float),
        np.asarray(cols[2], dtype=float), np.asarray(cols[3], dtype=np.bool_),
        np.asarray(cols[4], dtype=np.int64), np.asarray(cols[5], dtype=float),
        np.asarray(cols[6], dtype=float), tr.pos.copy(), tr.speed.copy())


@dataclass
class Replay:
    pos: np.ndarray
    speed: np.ndarray
    accel: np.ndarray
    collisions: int

    @property
    def collided(self) -> bool:
        return self.collisions > 0


class Replayer:
    """Reusable replay of one vehicle; keeps output buffers between calls."""

    def __init__(self, inputs: ReplayInputs, model, relax_mode: str = "1p",
                 relax: Optional[RelaxationConfig] = None):
        self.inp = inputs
        self.model = ModelKind.parse(model)
        self.relax_mode = parse_relax_mode(relax_mode)
        self.relax = relax or RelaxationConfig()
        self.n_cf = len(PARAM_NAMES[self.model])
        n = inputs.n
        self._x = np.empty(n)
        self._v = np.empty(n)
        self._a = np.empty(n)
        self._no_events = tuple(a[:0] for a in inputs.events)

    def _run(self, params) -> int:
        p = np.asarray(params, dtype=float)
        cf = np.ascontiguousarray(p[:self.n_cf])
        extra = p[self.n_cf:]
        mode = self.relax_mode
        ev = self.inp.events if mode != "none" else self._no_events
        c_s = c_v = 1.0
        ska, t_ska, tau = False, 0.0, 1.0
        if mode == "1p":
            c_s = c_v = extra[0]
        elif mode == "2p":
            c_s, c_v = extra[0], extra[1]
        elif mode == "ska":
            ska, t_ska, tau = True, extra[0], extra[1]
        r = self.relax
        inp = self.inp
        return follow_kernel(int(self.model), cf, inp.x0, inp.v0, inp.dt, inp.n, inp.t0,
                             inp.lead_rear, inp.lead_speed, *ev, c_s, c_v, r.positive_only,
                             r.safeguard, r.safeguard_alpha, r.safeguard_beta,
                             r.safeguard_eps, ska, t_ska, tau, self._x, self._v, self._a)

    def mse(self, params) -> float:
        """Position MSE against the recording; inf for unusable parameters."""
        try:
            self._run(params)
        except (ZeroDivisionError, ValueError):
            return np.inf
        d = self._x - self.inp.rec_pos
        m = float(np.dot(d, d) / len(d))
        return m if np.isfinite(m) else np.inf

    def simulate(self, params) -> Replay:
        col = self._run(params)
        return Replay(self._x.copy(), self._v.copy(), self._a.copy(), int(col))


def replay_simulate(ds: TrajectoryDataset, vid: int, params: Sequence[float], model="IDM",
                    relax_mode: str = "1p", relax: Optional[RelaxationConfig] = None) -> Replay:
    """Simulate ``vid`` from its recorded initial state behind its recorded leaders.

    ``params`` lists the car following parameters followed by the relaxation
    parameters of ``relax_mode`` (see ``RELAX_PARAM_NAMES``).
    """
    rp = Replayer(prepare_replay(ds, vid), model, relax_mode, relax)
    want = rp.n_cf + len(RELAX_PARAM_NAMES[rp.relax_mode])
    if len(params) != want:
        raise ValueError(f"expected {want} parameters, got {len(params)}")
    return rp.simulate(params)


def mse_position(simulated, recorded) -> float:
    """Mean squared position error in m^2 over aligned samples."""
    s = np.asarray(simulated, dtype=float)
    r = np.asarray(recorded, dtype=float)
    if s.shape != r.shape:
        raise ValueError(f"trajectory lengths differ: {s.shape} vs {r.shape}")
    if s.size == 0:
        raise ValueError("empty trajectories")
    return float(np.mean((s - r) ** 2))


def recorded_acceleration(speed, dt: float) -> np.ndarray:
    """Central finite difference of recorded speed (one-sided at the ends)."""
    speed = np.asarray(speed, dtype=float)
    if len(speed) < 2:
        return np.zeros_like(speed)
    return np.gradient(speed, dt)


def acceleration_bounds(recorded_accel) -> tuple[float, float]:
    a = np.asarray(recorded_accel, dtype=float)
    return min(-6.0, 1.1 * float(a.min())), max(4.0, 1.1 * float(a.max()))


def realistic_acceleration(simulated_accel, recorded_accel) -> bool:
    """True when every simulated acceleration lies inside the recording-based bounds."""
    lo, hi = acceleration_bounds(recorded_accel)
    a = np.asarray(simulated_accel, dtype=float)
    return bool(np.all((a >= lo) & (a <= hi)))

"""Vehicle trajectory datasets on a fixed time grid.

The CSV schema, one row per vehicle and frame::

    veh_id,t,pos,speed,lane,leader_id,length,merge

``pos`` is the front bumper in m along the road, ``speed`` in m/s, ``t`` in s.
``leader_id`` is empty when the vehicle has no leader.  ``merge`` is 1 on every
row of a vehicle that entered from an on-ramp and 0 otherwise.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional

import numpy as np

COLUMNS = ("veh_id", "t", "pos", "speed", "lane", "leader_id", "length", "merge")
NO_LEADER = -1
FEET = 0.3048

# NGSim reconstructed-trajectory columns used by the adapter
NGSIM_COLUMNS = {
    "veh_id": "Vehicle_ID",
    "frame": "Frame_ID",
    "pos": "Local_Y",
    "speed": "v_Vel",
    "lane": "Lane_ID",
    "leader_id": "Preceding",
    "length": "v_Length",
}


class DatasetError(ValueError):
    pass


@dataclass
class VehicleTrack:
    """One vehicle sampled at consecutive frames starting at ``frame0``."""

    vid: int
    frame0: int
    pos: np.ndarray
    speed: np.ndarray
    lane: np.ndarray
    leader: np.ndarray
    length: float
    merge: bool = False

    def __post_init__(self):
        self.pos = np.asarray(self.pos, dtype=float)
        self.speed = np.asarray(self.speed, dtype=float)
        self.lane = np.asarray(self.lane, dtype=np.int64)
        self.leader = np.asarray(self.leader, dtype=np.int64)
        n = len(self.pos)
        if n == 0 or not len(self.speed) == len(self.lane) == len(self.leader) == n:
            raise DatasetError(f"vehicle {self.vid}: columns have different lengths")
        if not self.length > 0:
            raise DatasetError(f"vehicle {self.vid}: length must be positive")

    @property
    def n(self) -> int:
        return len(self.pos)

    @property
    def frames(self) -> np.ndarray:
        return self.frame0 + np.arange(self.n)

    @property
    def last_frame(self) -> int:
        return self.frame0 + self.n - 1

    def covers(self, frame: int) -> bool:
        return self.frame0 <= frame <= self.last_frame

    def lc_indices(self) -> np.ndarray:
        """Local indices of the first frame with a new leader id."""
        return np.flatnonzero(self.leader[1:] != self.leader[:-1]) + 1

    @property
    def n_lc(self) -> int:
        return len(self.lc_indices())

    @property
    def has_leader(self) -> bool:
        return bool(np.any(self.leader != NO_LEADER))


@dataclass
class TrajectoryDataset:
    dt: float
    tracks: dict[int, VehicleTrack] = field(default_factory=dict)

    def __post_init__(self):
        if not self.dt > 0:
            raise DatasetError("dt must be positive")

    def __len__(self) -> int:
        return len(self.tracks)

    def __getitem__(self, vid: int) -> VehicleTrack:
        return self.tracks[vid]

    def __contains__(self, vid) -> bool:
        return vid in self.tracks

    def add(self, track: VehicleTrack) -> None:
        if track.vid in self.tracks:
            raise DatasetError(f"duplicate vehicle id {track.vid}")
        self.tracks[track.vid] = track

    def times(self, vid: int) -> np.ndarray:
        return self.tracks[vid].frames * self.dt

    def missing_leader_frames(self, vid: int) -> np.ndarray:
        """Local indices where the referenced leader has no record."""
        tr = self.tracks[vid]
        bad = []
        for i, (f, lid) in enumerate(zip(tr.frames, tr.leader)):
            if lid == NO_LEADER:
                continue
            lt = self.tracks.get(int(lid))
            if lt is None or not lt.covers(int(f)):
                bad.append(i)
        return np.asarray(bad, dtype=np.int64)

    def calibratable_ids(self) -> list[int]:
        """Vehicles with at least one leader and every leader fully recorded."""
        return [vid for vid, tr in sorted(self.tracks.items())
                if tr.has_leader and len(self.missing_leader_frames(vid)) == 0]

    def excluded_ids(self) -> list[int]:
        ok = set(self.calibratable_ids())
        return [vid for vid, tr in sorted(self.tracks.items()) if tr.has_leader and vid not in ok]

    # -- io ---------------------------------------------------------------

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(COLUMNS)
            for vid in sorted(self.tracks):
                tr = self.tracks[vid]
                for i, f in enumerate(tr.frames):
                    lid = int(tr.leader[i])
                    w.writerow([vid, repr(round(float(f) * self.dt, 9)), repr(float(tr.pos[i])),
                                repr(float(tr.speed[i])), int(tr.lane[i]),
                                "" if lid == NO_LEADER else lid, repr(float(tr.length)),
                                int(tr.merge)])

    @classmethod
    def from_csv(cls, path, dt: Optional[float] = None) -> "TrajectoryDataset":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = [c for c in COLUMNS if c not in (reader.fieldnames or ())]
            if missing:
                raise DatasetError(f"{path}: missing column(s) {', '.join(missing)}")
            rows: dict[int, list] = {}
            for line, r in enumerate(reader, start=2):
                try:
                    vid = int(r["veh_id"])
                    lead = r["leader_id"].strip()
                    rows.setdefault(vid, []).append((
                        float(r["t"]), float(r["pos"]), float(r["speed"]), int(r["lane"]),
                        int(lead) if lead else NO_LEADER, float(r["length"]),
                        bool(int(r["merge"]))))
                except (TypeError, ValueError) as e:
                    raise DatasetError(f"{path}:{line}: {e}") from None
        return cls.from_rows(rows, dt)

    @classmethod
    def from_rows(cls, rows: Mapping[int, Iterable[tuple]], dt: Optional[float] = None
                  ) -> "TrajectoryDataset":
        """Build from ``{vid: [(t, pos, speed, lane, leader, length, merge), ...]}``."""
        per = {vid: sorted(r) for vid, r in rows.items() if r}
        if dt is None:
            steps = [b[0] - a[0] for r in per.values() for a, b in zip(r, r[1:])]
            if not steps:
                raise DatasetError("cannot infer dt from single-frame vehicles")
            dt = float(np.median(steps))
        ds = cls(dt)
        for vid, r in per.items():
            a = np.array([x[:5] for x in r], dtype=float)
            frames = a[:, 0] / dt
            k = np.round(frames)
            if np.any(np.abs(frames - k) > 1e-6) or np.any(np.diff(k) != 1):
                raise DatasetError(f"vehicle {vid}: samples are not on a uniform {dt} s grid")
            ds.add(VehicleTrack(vid, int(k[0]), a[:, 1], a[:, 2], a[:, 3].astype(np.int64),
                                a[:, 4].astype(np.int64), r[0][5], any(x[6] for x in r)))
        return ds


def read_ngsim(path, columns: Mapping[str, str] = NGSIM_COLUMNS, *, dt: float = 0.1,
               feet: bool = True, ramp_lanes: Iterable[int] = (7,)) -> TrajectoryDataset:
    """Read an NGSim-style trajectory file.

    ``columns`` maps the dataset fields to file headers.  Frame numbers are
    converted to times with ``dt``; a leader id of 0 means no leader.  Vehicles
    that are ever on one of ``ramp_lanes`` are flagged as merges.
    """
    scale = FEET if feet else 1.0
    ramp = set(int(x) for x in ramp_lanes)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in columns.values() if c not in (reader.fieldnames or ())]
        if missing:
            raise DatasetError(f"{path}: missing column(s) {', '.join(missing)}")
        rows: dict[int, list] = {}
        for line, r in enumerate(reader, start=2):
            try:
                vid = int(float(r[columns["veh_id"]]))
                lead = int(float(r[columns["leader_id"]] or 0))
                rows.setdefault(vid, []).append((
                    int(float(r[columns["frame"]])) * dt,
                    float(r[columns["pos"]]) * scale,
                    float(r[columns["speed"]]) * scale,
                    int(float(r[columns["lane"]])),
                    lead if lead > 0 else NO_LEADER,
                    float(r[columns["length"]]) * scale,
                    False))
            except (TypeError, ValueError) as e:
                raise DatasetError(f"{path}:{line}: {e}") from None
    for vid, r in rows.items():
        if any(x[3] in ramp for x in r):
            rows[vid] = [x[:6] + (True,) for x in r]
    return TrajectoryDataset.from_rows(rows, dt)

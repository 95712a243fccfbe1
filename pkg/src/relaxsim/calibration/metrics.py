"""Aggregate calibration errors into the grouped report."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .dataset import TrajectoryDataset
from .ga import CalibrationResult

NEAR_LC_WINDOW = 10.0
MANY_LC = 3
GROUPS = ("all", "near_LC", "many_LC", "merges", "no_LC")


@dataclass(frozen=True)
class GroupStats:
    mean: float
    median: float
    std: float
    n: int

    @classmethod
    def of(cls, values) -> Optional["GroupStats"]:
        a = np.asarray(values, dtype=float)
        if a.size == 0:
            return None
        return cls(float(a.mean()), float(np.median(a)), float(a.std()), int(a.size))


@dataclass(frozen=True)
class MetricsReport:
    groups: dict
    realistic_acc: float
    n_vehicles: int

    def __getitem__(self, name) -> Optional[GroupStats]:
        return self.groups[name]

    def rows(self):
        for g in GROUPS:
            s = self.groups[g]
            yield (g, *(("", "", "", 0) if s is None else (s.mean, s.median, s.std, s.n)))

    def as_text(self) -> str:
        lines = [f"vehicles: {self.n_vehicles}", f"realistic_acc: {self.realistic_acc:.3f}",
                 f"{'group':<10}{'mean':>12}{'median':>12}{'std':>12}{'n':>6}"]
        for g, *vals in self.rows():
            if vals[-1] == 0:
                lines.append(f"{g:<10}{'absent':>12}")
            else:
                lines.append(f"{g:<10}{vals[0]:>12.4g}{vals[1]:>12.4g}{vals[2]:>12.4g}{vals[3]:>6d}")
        return "\n".join(lines) + "\n"


def near_lc_errors(result: CalibrationResult, ds: TrajectoryDataset,
                   window: float = NEAR_LC_WINDOW) -> list[float]:
    """MSE over ``[t_lc, t_lc + window]`` for each leader change, cut at the trajectory end."""
    tr = ds[result.vehicle_id]
    err2 = (np.asarray(result.sim_pos) - tr.pos) ** 2
    w = int(round(window / ds.dt))
    out = []
    for k in tr.lc_indices():
        start = int(k) - 1
        out.append(float(err2[start:start + w + 1].mean()))
    return out


def metrics_report(results: Sequence[CalibrationResult], ds: TrajectoryDataset) -> MetricsReport:
    if not results:
        raise ValueError("no calibration results")
    mse = {r.vehicle_id: r.mse for r in results}
    near = [e for r in results for e in near_lc_errors(r, ds)]
    groups = {
        "all": GroupStats.of(list(mse.values())),
        "near_LC": GroupStats.of(near),
        "many_LC": GroupStats.of([r.mse for r in results if r.n_lc >= MANY_LC]),
        "merges": GroupStats.of([r.mse for r in results if r.merge]),
        "no_LC": GroupStats.of([r.mse for r in results if r.n_lc == 0]),
    }
    frac = float(np.mean([r.realistic for r in results]))
    return MetricsReport(groups, frac, len(results))


def write_metrics(report: MetricsReport, path) -> None:
    with open(path, "w") as fh:
        fh.write(report.as_text())

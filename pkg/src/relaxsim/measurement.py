"""Macroscopic observables from trajectory and detector logs.

Trajectory arrays use the columns ``t, veh_id, lane, pos, speed, accel``;
detector arrays use ``detector_id, t, veh_id, speed, lane``.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .simulation import Schedule, SimConfig, World

B2_DEFAULT = 18.85


class MeasurementError(RuntimeError):
    pass


@dataclass(frozen=True)
class EdieRegion:
    x_range: tuple[float, float]
    t_range: tuple[float, float]

    def __post_init__(self):
        (x0, x1), (t0, t1) = self.x_range, self.t_range
        if not (x1 > x0 and t1 > t0):
            raise ValueError("Edie region needs nonempty ranges")

    @property
    def area(self) -> float:
        return (self.x_range[1] - self.x_range[0]) * (self.t_range[1] - self.t_range[0])


@dataclass(frozen=True)
class BreakdownCriteria:
    """Thresholds on detector speeds (m/s) and the time scales (s) they act on."""

    threshold: float = 0.9 * B2_DEFAULT
    window: float = 120.0
    sustain: float = 240.0
    wave_band: float = 1.0
    wave_window: float = 30.0
    wave_baseline: float = 300.0
    wave_refractory: float = 30.0
    wave_lanes: str = "right"   # "right" (lane next to the ramp) or "all"
    grid: float = 1.0


# --------------------------------------------------------------------------
# Edie
# --------------------------------------------------------------------------

def trajectory_segments(traj: np.ndarray, lanes: Optional[Sequence[int]] = None):
    """Consecutive samples of each vehicle as straight space-time segments.

    Returns ``(xa, xb, ta, tb)``.  A segment belongs to the lane of its first
    sample.
    """
    if len(traj) == 0:
        z = np.zeros(0)
        return z, z, z, z
    order = np.lexsort((traj[:, 0], traj[:, 1]))
    tr = traj[order]
    same = tr[1:, 1] == tr[:-1, 1]
    dts = np.diff(tr[:, 0])
    step = np.min(dts[same & (dts > 0)]) if np.any(same & (dts > 0)) else 0.0
    ok = same & (dts > 0) & (dts <= 1.5 * step + 1e-9)
    if lanes is not None:
        ok &= np.isin(tr[:-1, 2], lanes)
    a = tr[:-1][ok]
    b = tr[1:][ok]
    return a[:, 3], b[:, 3], a[:, 0], b[:, 0]


def _clip_fraction(xa, xb, ta, tb, x0, x1, t0, t1):
    """Fraction of each segment inside the rectangle (vectorised)."""
    lo = np.zeros_like(xa)
    hi = np.ones_like(xa)
    for a, b, r0, r1 in ((xa, xb, x0, x1), (ta, tb, t0, t1)):
        d = b - a
        moving = d != 0
        with np.errstate(divide="ignore", invalid="ignore"):
            s0 = np.where(moving, (r0 - a) / d, -np.inf)
            s1 = np.where(moving, (r1 - a) / d, np.inf)
        enter = np.minimum(s0, s1)
        leave = np.maximum(s0, s1)
        # a coordinate that does not move must already lie in the range
        inside = moving | ((a >= r0) & (a < r1))
        lo = np.maximum(lo, np.where(inside, enter, np.inf))
        hi = np.minimum(hi, np.where(inside, leave, -np.inf))
    return np.clip(hi - lo, 0.0, None)


def edie_flow_density(traj: np.ndarray, region: EdieRegion,
                      lanes: Optional[Sequence[int]] = None) -> tuple[float, float]:
    """Edie flow (veh/s) and density (veh/m) of all lanes combined over ``region``."""
    xa, xb, ta, tb = trajectory_segments(traj, lanes)
    if len(xa) == 0:
        return 0.0, 0.0
    (x0, x1), (t0, t1) = region.x_range, region.t_range
    frac = _clip_fraction(xa, xb, ta, tb, x0, x1, t0, t1)
    dist = float(np.sum(frac * np.abs(xb - xa)))
    time = float(np.sum(frac * (tb - ta)))
    return dist / region.area, time / region.area


def fd_points(traj: np.ndarray, x_width: float = 100.0, t_width: float = 120.0,
              x_range: Optional[tuple[float, float]] = None,
              t_range: Optional[tuple[float, float]] = None,
              lanes: Optional[Sequence[int]] = None, per_lane: bool = True) -> np.ndarray:
    """Edie (k, q) per space-time bin.

    Returns rows ``(x_start, t_start, k veh/km, q veh/hr)``; with ``per_lane``
    the values are divided by the number of lanes aggregated.
    """
    xa, xb, ta, tb = trajectory_segments(traj, lanes)
    if len(xa) == 0:
        return np.zeros((0, 4))
    if x_range is None:
        x_range = (0.0, float(np.max(xb)))
    if t_range is None:
        t_range = (float(np.min(ta)), float(np.max(tb)))
    nx = max(1, int(math.floor((x_range[1] - x_range[0]) / x_width + 1e-9)))
    nt = max(1, int(math.floor((t_range[1] - t_range[0]) / t_width + 1e-9)))
    if np.any(np.abs(xb - xa) > x_width) or np.any(tb - ta > t_width):
        raise MeasurementError("trajectory sampling is coarser than the bins")
    dist = np.zeros((nx, nt))
    tim = np.zeros((nx, nt))
    ixa = np.floor((np.minimum(xa, xb) - x_range[0]) / x_width).astype(int)
    ita = np.floor((ta - t_range[0]) / t_width).astype(int)
    # each segment touches at most two bins per axis
    for dx in (0, 1):
        for dtb in (0, 1):
            ix = ixa + dx
            it = ita + dtb
            ok = (ix >= 0) & (ix < nx) & (it >= 0) & (it < nt)
            if not np.any(ok):
                continue
            bx0 = x_range[0] + ix[ok] * x_width
            bt0 = t_range[0] + it[ok] * t_width
            frac = _clip_fraction(xa[ok], xb[ok], ta[ok], tb[ok], bx0, bx0 + x_width, bt0,
                                  bt0 + t_width)
            np.add.at(dist, (ix[ok], it[ok]), frac * np.abs(xb[ok] - xa[ok]))
            np.add.at(tim, (ix[ok], it[ok]), frac * (tb[ok] - ta[ok]))
    area = x_width * t_width
    n_l = len(lanes) if (per_lane and lanes is not None) else (
        len(np.unique(traj[:, 2])) if per_lane else 1)
    n_l = max(n_l, 1)
    xs, ts = np.meshgrid(x_range[0] + x_width * np.arange(nx), t_range[0] + t_width * np.arange(nt),
                         indexing="ij")
    k = tim / area * 1000.0 / n_l
    q = dist / area * 3600.0 / n_l
    return np.column_stack([xs.ravel(), ts.ravel(), k.ravel(), q.ravel()])


def write_fd_points(path, pts: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x_start", "t_start", "density_veh_per_km", "flow_veh_per_hr"])
        for row in pts:
            w.writerow([f"{row[0]:.1f}", f"{row[1]:.1f}", f"{row[2]:.4f}", f"{row[3]:.2f}"])


# --------------------------------------------------------------------------
# detector signals
# --------------------------------------------------------------------------

def rolling_speed(det: np.ndarray, window: float, grid: float = 1.0,
                  t_end: Optional[float] = None) -> tuple[np.ndarray, np.ndarray]:
    """Mean crossing speed over the trailing ``window`` on a regular grid.

    A window without crossings reads 0 once anything has crossed (traffic is
    standing) and NaN before the first crossing.
    """
    if len(det) == 0:
        return np.zeros(0), np.zeros(0)
    o = np.argsort(det[:, 1], kind="mergesort")
    t = det[o, 1]
    v = det[o, 3]
    t_end = float(t[-1]) if t_end is None else t_end
    grid_t = np.arange(window, t_end + 1e-9, grid)
    cs = np.concatenate([[0.0], np.cumsum(v)])
    hi = np.searchsorted(t, grid_t, side="right")
    lo = np.searchsorted(t, grid_t - window, side="right")
    n = hi - lo
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = (cs[hi] - cs[lo]) / n
    mean = np.where(n > 0, mean, np.where(grid_t >= t[0], 0.0, np.nan))
    return grid_t, mean


def detect_breakdown(det: np.ndarray, threshold: float = BreakdownCriteria.threshold,
                     sustain: float = 240.0, window: float = 120.0, grid: float = 1.0,
                     t_end: Optional[float] = None) -> Optional[float]:
    """Start of the first stretch where the rolling mean stays below ``threshold``
    for at least ``sustain`` seconds; None when there is none.

    The time returned is the centre of the first window that is below threshold.
    """
    gt, m = rolling_speed(det, window, grid, t_end)
    if len(gt) == 0:
        return None
    low = np.nan_to_num(m, nan=np.inf) < threshold
    need = int(round(sustain / grid)) + 1
    run = 0
    for k, flag in enumerate(low):
        run = run + 1 if flag else 0
        if run >= need:
            return float(gt[k - run + 1] - window / 2)
    return None


def wave_arrivals(det: np.ndarray, band: float = 1.0, window: float = 30.0,
                  baseline: float = 300.0, refractory: float = 30.0, grid: float = 1.0,
                  t_range: Optional[tuple[float, float]] = None) -> np.ndarray:
    """Arrival times of speed waves at a detector.

    The short rolling mean is compared with a slow, centred baseline.  A wave
    arrives when the difference crosses zero downward, provided it had been
    above ``+band`` since the previous wave and goes on to drop below
    ``-band``.  The baseline follows the congested speed level, so the same
    rule works whether the queue is crawling or moving.
    """
    gt, m = rolling_speed(det, window, grid)
    if len(gt) == 0:
        return np.zeros(0)
    gb, b = rolling_speed(det, baseline, grid)
    base = np.interp(gt + baseline / 2, gb, b)
    y = m - base
    if t_range is not None:
        keep = (gt >= t_range[0]) & (gt <= t_range[1])
        gt, y = gt[keep], y[keep]
    out = []
    armed = False
    cross = None
    for k in range(1, len(y)):
        if y[k] > band:
            armed = True
        if y[k - 1] >= 0.0 > y[k]:
            cross = gt[k]
        if armed and cross is not None and y[k] < -band:
            if not out or cross - out[-1] >= refractory:
                out.append(cross)
            armed = False
            cross = None
    return np.array(out)


def wave_period(det: np.ndarray, **kw) -> tuple[float, float]:
    """Mean and standard deviation (minutes) of the gaps between wave arrivals."""
    arr = wave_arrivals(det, **kw)
    if len(arr) < 2:
        raise MeasurementError(f"need at least two waves, found {len(arr)}")
    gaps = np.diff(arr) / 60.0
    return float(np.mean(gaps)), float(np.std(gaps))


@dataclass
class DischargeSeries:
    t_start: np.ndarray
    flow: np.ndarray
    flow_by_lane: dict[int, np.ndarray]

    @property
    def mean(self) -> float:
        return float(np.mean(self.flow))

    @property
    def std(self) -> float:
        return float(np.std(self.flow))

    def lane_mean(self, lane: int) -> float:
        f = self.flow_by_lane.get(lane)
        return float(np.mean(f)) if f is not None else 0.0


def discharge_rate(det: np.ndarray, start: float, duration: float = 2700.0,
                   window: float = 120.0, t_end: Optional[float] = None) -> DischargeSeries:
    """Counts per ``window`` in ``[start, start + duration)`` scaled to veh/hr."""
    n = int(math.floor(duration / window + 1e-9))
    if t_end is not None:
        n = min(n, int(math.floor((t_end - start) / window + 1e-9)))
    if n < 1:
        raise MeasurementError("not enough data after breakdown for one discharge window")
    edges = start + window * np.arange(n + 1)
    counts, _ = np.histogram(det[:, 1], bins=edges)
    by_lane = {}
    if det.shape[1] > 4:
        for lane in np.unique(det[:, 4]).astype(int):
            c, _ = np.histogram(det[det[:, 4] == lane, 1], bins=edges)
            by_lane[lane] = c * 3600.0 / window
    return DischargeSeries(edges[:-1], counts * 3600.0 / window, by_lane)


# --------------------------------------------------------------------------
# capacity experiments
# --------------------------------------------------------------------------

@dataclass
class CapacityReport:
    capacity: float
    discharge: float
    discharge_by_lane: dict
    drop_pct: float
    drop_std: float
    period_min: float
    period_std: float
    mainline_capacity: float = math.nan
    onramp_inflow: float = 0.0
    breakdown_time: Optional[float] = None
    extra: dict = field(default_factory=dict)

    @classmethod
    def build(cls, capacity: float, series: DischargeSeries, period: tuple[float, float], **kw):
        drop = 100.0 * (capacity - series.mean) / capacity
        drop_std = 100.0 * series.std / capacity
        by_lane = {k: float(np.mean(v)) for k, v in series.flow_by_lane.items()}
        return cls(capacity, series.mean, by_lane, drop, drop_std, period[0], period[1], **kw)

    def as_text(self) -> str:
        lanes = "/".join(f"{self.discharge_by_lane[k]:.0f}" for k in sorted(self.discharge_by_lane))
        return (f"capacity {self.capacity:.0f} veh/hr, discharge {self.discharge:.0f} ({lanes}), "
                f"drop {self.drop_pct:.1f}% ({self.drop_std:.1f}), "
                f"period {self.period_min:.2f} ({self.period_std:.2f}) min")


def _predicate_config(base: SimConfig, mainline_total: float, onramp: float, warmup: float,
                      hold: float, seed: int) -> SimConfig:
    n = base.network.n_lanes
    lane_q = mainline_total / n
    return replace(base, mainline_inflow=(Schedule((0.0, warmup), (0.0, lane_q)),) * n,
                   onramp_inflow=Schedule.constant(onramp), horizon=warmup + hold,
                   record_every=0, seed=seed)


def run_until_breakdown(cfg: SimConfig, crit: BreakdownCriteria, det_index: int = 0,
                        check_every: float = 60.0, after: float = 0.0):
    """Run ``cfg``; stop once a breakdown is confirmed and ``after`` more seconds have passed.

    Returns ``(world, breakdown time or None)``.
    """
    world = World(cfg)
    state = {"bd": None}

    def cb(w: World) -> bool:
        if state["bd"] is None:
            det = w.detector_log()
            det = det[det[:, 0] == det_index]
            state["bd"] = detect_breakdown(det, crit.threshold, crit.sustain, crit.window,
                                           crit.grid, t_end=w.t)
        return state["bd"] is not None and w.t >= state["bd"] + after
    world.run(callback=cb, check_every=check_every)
    return world, state["bd"]


def breaks_down(base: SimConfig, mainline_total: float, onramp: float, *, warmup: float = 600.0,
                hold: float = 3600.0, seed: int = 0,
                crit: BreakdownCriteria = BreakdownCriteria()) -> bool:
    cfg = _predicate_config(base, mainline_total, onramp, warmup, hold, seed)
    _, bd = run_until_breakdown(cfg, crit)
    return bd is not None


@dataclass
class CapacitySearch:
    mainline: float          # largest mainline inflow without breakdown
    failing: float           # smallest mainline inflow with breakdown
    onramp_inflow: float
    history: list

    @property
    def capacity(self) -> float:
        """Total demand (mainline + ramp) at the largest stable mainline inflow."""
        return self.mainline + self.onramp_inflow


def capacity_search(base: SimConfig, onramp_inflow: float, *, lo: float = 2000.0,
                    hi: float = 5000.0, resolution: float = 4.0, warmup: float = 600.0,
                    hold: float = 3600.0, seed: int = 0,
                    crit: BreakdownCriteria = BreakdownCriteria()) -> CapacitySearch:
    """Bisection over total mainline inflow on the predicate "no breakdown"."""
    hist = []

    def fails(q):
        r = breaks_down(base, q, onramp_inflow, warmup=warmup, hold=hold, seed=seed, crit=crit)
        hist.append((q, r))
        return r

    if fails(lo):
        raise MeasurementError(f"breakdown already at {lo} veh/hr mainline inflow")
    while not fails(hi):
        lo, hi = hi, hi + (hi - lo)
        if hi > 20000:
            raise MeasurementError("no breakdown found at any inflow")
    while hi - lo > resolution:
        mid = lo + resolution * math.floor((hi - lo) / (2 * resolution))
        if mid <= lo:
            mid = lo + resolution
        if fails(mid):
            hi = mid
        else:
            lo = mid
    return CapacitySearch(lo, hi, onramp_inflow, hist)


def measure_discharge(base: SimConfig, mainline_total: float, onramp: float, *,
                      warmup: float = 600.0, max_wait: float = 7200.0, duration: float = 2700.0,
                      delay: float = 120.0, seed: int = 0,
                      crit: BreakdownCriteria = BreakdownCriteria(), upstream: int = 0,
                      downstream: int = 2):
    """Run past breakdown and return ``(series, period, breakdown time)``."""
    cfg = _predicate_config(base, mainline_total, onramp, warmup, max_wait, seed)
    cfg = replace(cfg, horizon=warmup + max_wait + delay + duration)
    world, bd = run_until_breakdown(cfg, crit, upstream, after=delay + duration)
    if bd is None:
        raise MeasurementError(f"no breakdown at {mainline_total} veh/hr within the horizon")
    det = world.detector_log()
    start = bd + delay
    series = discharge_rate(det[det[:, 0] == downstream], start, duration, crit.window,
                            t_end=world.t)
    up = det[det[:, 0] == upstream]
    if crit.wave_lanes == "right":
        up = up[up[:, 4] == base.network.n_lanes - 1]
    try:
        period = wave_period(up, band=crit.wave_band, window=crit.wave_window,
                             baseline=crit.wave_baseline, refractory=crit.wave_refractory,
                             grid=crit.grid, t_range=(start, start + duration))
    except MeasurementError:
        # too few waves for a period; capacity and discharge still stand
        period = (math.nan, math.nan)
    return series, period, bd


def capacity_drop_experiment(base: SimConfig, onramp_inflow: float, *, seed: int = 0,
                             duration: float = 2700.0, resolution: float = 4.0,
                             crit: BreakdownCriteria = BreakdownCriteria(),
                             lo: float = 2000.0, hi: float = 5000.0) -> CapacityReport:
    """Capacity by bisection, then discharge and wave period at the first failing inflow."""
    search = capacity_search(base, onramp_inflow, lo=lo, hi=hi, resolution=resolution, seed=seed,
                             crit=crit)
    series, period, bd = measure_discharge(base, search.failing, onramp_inflow, duration=duration,
                                           seed=seed, crit=crit)
    return CapacityReport.build(search.capacity, series, period, mainline_capacity=search.mainline,
                                onramp_inflow=onramp_inflow, breakdown_time=bd,
                                extra={"history": search.history, "seed": seed})


def _experiment_job(args):
    base, onramp, kw = args
    return capacity_drop_experiment(base, onramp, **kw)


def capacity_drop_sweep(configs: Sequence[SimConfig], onramp_inflow: float, jobs: int = 1,
                        **kw) -> list[CapacityReport]:
    """One experiment per config, optionally in worker processes."""
    tasks = [(c, onramp_inflow, dict(kw, seed=c.seed)) for c in configs]
    if jobs <= 1:
        return [_experiment_job(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(_experiment_job, tasks))


def summarize(reports: Sequence[CapacityReport]) -> dict:
    """Means over seeds of the reported fields."""
    def m(name):
        return float(np.mean([getattr(r, name) for r in reports]))
    return {k: m(k) for k in ("capacity", "discharge", "drop_pct", "period_min")}

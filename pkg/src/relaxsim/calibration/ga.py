"""Real-coded genetic algorithm and per-vehicle calibration."""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from ..cf_models import ModelKind
from ..relaxation import RelaxationConfig
from .dataset import TrajectoryDataset
from .replay import (CalibrationError, CalibrationProblem, Replayer, prepare_replay,
                     realistic_acceleration, recorded_acceleration)


@dataclass(frozen=True)
class GAConfig:
    population: int = 60
    generations: int = 200
    tournament: int = 3
    crossover: float = 0.9
    mutation: float = 0.1
    sigma: float = 0.05
    elites: int = 2
    blend_alpha: float = 0.5
    polish: bool = True
    polish_evals: int = 2000
    polish_starts: int = 0

    def __post_init__(self):
        if self.population < 2 or self.generations < 0 or self.tournament < 1:
            raise ValueError("need population >= 2, generations >= 0, tournament >= 1")
        if not 0 <= self.elites < self.population:
            raise ValueError("elites must be in [0, population)")
        for name in ("crossover", "mutation"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} probability must be in [0, 1]")
        if self.sigma < 0 or self.blend_alpha < 0:
            raise ValueError("sigma and blend_alpha must be nonnegative")
        if self.polish_evals < 0 or self.polish_starts < 0:
            raise ValueError("polish_evals and polish_starts must be nonnegative")


@dataclass
class GAResult:
    x: np.ndarray
    f: float
    history: np.ndarray = field(repr=False)
    n_evals: int = 0


def _evaluate(f, pop) -> np.ndarray:
    out = np.array([f(x) for x in pop], dtype=float)
    out[~np.isfinite(out)] = np.inf
    return out


def ga_minimize(f: Callable[[np.ndarray], float], bounds, cfg: GAConfig = GAConfig(),
                rng: Optional[np.random.Generator] = None) -> GAResult:
    """Minimize ``f`` over a box.

    Tournament selection, blend (BLX-alpha) crossover, Gaussian mutation with a
    standard deviation of ``sigma`` times the box width, and elitism.
    Non-finite objective values mark infeasible candidates.  ``history[g]`` is
    the best value found up to generation ``g``, generation 0 being the random
    initial population.

    Raises:
        CalibrationError: if no feasible candidate was ever found.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    b = np.asarray(bounds, dtype=float)
    if b.ndim != 2 or b.shape[1] != 2 or np.any(~np.isfinite(b)) or np.any(b[:, 1] <= b[:, 0]):
        raise ValueError("bounds must be finite (low, high) pairs with low < high")
    lo, hi = b[:, 0], b[:, 1]
    width = hi - lo
    P, d, E = cfg.population, len(b), cfg.elites

    pop = lo + rng.random((P, d)) * width
    fit = _evaluate(f, pop)
    n_evals = P
    i = int(np.argmin(fit))
    best_x, best_f = pop[i].copy(), fit[i]
    history = [best_f]

    for _ in range(cfg.generations):
        order = np.argsort(fit, kind="stable")
        kids = []
        while len(kids) < P - E:
            parents = []
            for _ in range(2):
                idx = rng.integers(0, P, cfg.tournament)
                parents.append(pop[idx[np.argmin(fit[idx])]])
            a, c = parents
            if rng.random() < cfg.crossover:
                span = np.abs(a - c)
                base = np.minimum(a, c) - cfg.blend_alpha * span
                pair = [base + rng.random(d) * (1 + 2 * cfg.blend_alpha) * span for _ in range(2)]
            else:
                pair = [a.copy(), c.copy()]
            for k in pair:
                m = rng.random(d) < cfg.mutation
                k[m] += rng.normal(0.0, cfg.sigma, int(m.sum())) * width[m]
                kids.append(np.clip(k, lo, hi))
        kids = np.array(kids[:P - E]).reshape(-1, d)
        kid_fit = _evaluate(f, kids)
        n_evals += len(kids)
        pop = np.vstack([pop[order[:E]], kids])
        fit = np.concatenate([fit[order[:E]], kid_fit])
        i = int(np.argmin(fit))
        if fit[i] < best_f:
            best_x, best_f = pop[i].copy(), fit[i]
        history.append(best_f)

    if not np.isfinite(best_f):
        raise CalibrationError("every candidate was infeasible")
    return GAResult(best_x, float(best_f), np.asarray(history), n_evals)


def polish(f: Callable[[np.ndarray], float], x0, bounds, max_evals: int = 2000):
    """Bounded Nelder-Mead from ``x0``; returns ``(x, f(x), evaluations)``, never worse than ``x0``."""
    x0 = np.asarray(x0, dtype=float)
    f0 = f(x0)
    if max_evals <= 0:
        return x0, f0, 1
    r = minimize(f, x0, method="Nelder-Mead", bounds=np.asarray(bounds, dtype=float),
                 options={"maxfev": max_evals, "xatol": 1e-8, "fatol": 1e-14})
    if np.isfinite(r.fun) and r.fun < f0:
        return np.asarray(r.x), float(r.fun), r.nfev + 1
    return x0, f0, r.nfev + 1


@dataclass
class CalibrationResult:
    vehicle_id: int
    model: str
    relax_mode: str
    names: tuple
    params: np.ndarray
    mse: float
    realistic: bool
    collisions: int
    n_lc: int
    merge: bool
    sim_pos: np.ndarray = field(repr=False)
    history: np.ndarray = field(repr=False)

    @property
    def param_dict(self) -> dict[str, float]:
        return dict(zip(self.names, map(float, self.params)))


def vehicle_rng(seed: int, vehicle_id: int) -> np.random.Generator:
    """Independent stream per vehicle so results do not depend on scheduling."""
    return np.random.default_rng([int(seed), int(vehicle_id)])


def ga_calibrate(problem: CalibrationProblem, ds: TrajectoryDataset, cfg: GAConfig = GAConfig(),
                 rng: Optional[np.random.Generator] = None,
                 relax: Optional[RelaxationConfig] = None) -> CalibrationResult:
    """Fit one vehicle; returns the best parameters found and their MSE."""
    if problem.relax_mode == "ska" and problem.model != ModelKind.IDM:
        raise ValueError("the SKA time headway update only applies to IDM")
    vid = problem.vehicle_id
    rp = Replayer(prepare_replay(ds, vid), problem.model, problem.relax_mode, relax)
    rng = rng if rng is not None else vehicle_rng(0, vid)
    res = ga_minimize(rp.mse, problem.bounds_array, cfg, rng)
    if cfg.polish:
        b = problem.bounds_array
        x, fx, k = polish(rp.mse, res.x, b, cfg.polish_evals)
        n = res.n_evals + k
        # extra random starts for objectives with several basins
        for _ in range(cfg.polish_starts):
            x0 = b[:, 0] + rng.random(len(b)) * (b[:, 1] - b[:, 0])
            y, fy, k = polish(rp.mse, x0, b, cfg.polish_evals)
            n += k
            if fy < fx:
                x, fx = y, fy
        res = GAResult(x, fx, res.history, n)
    sim = rp.simulate(res.x)
    tr = ds[vid]
    ok = realistic_acceleration(sim.accel, recorded_acceleration(tr.speed, ds.dt))
    return CalibrationResult(vid, problem.model.name, problem.relax_mode, problem.names,
                             res.x, res.f, ok, sim.collisions, tr.n_lc, tr.merge,
                             sim.pos, res.history)


def _calibrate_one(args):
    ds, vid, model, relax_mode, bounds, cfg, seed, relax = args
    prob = CalibrationProblem.build(vid, model, relax_mode, bounds)
    return ga_calibrate(prob, ds, cfg, vehicle_rng(seed, vid), relax)


def calibrate_dataset(ds: TrajectoryDataset, model="IDM", relax_mode="1p", *,
                      ids: Optional[Sequence[int]] = None, cfg: GAConfig = GAConfig(),
                      seed: int = 0, bounds=None, relax: Optional[RelaxationConfig] = None,
                      jobs: int = 1) -> list[CalibrationResult]:
    """Calibrate every calibratable vehicle (or ``ids``) independently."""
    ids = ds.calibratable_ids() if ids is None else list(ids)
    tasks = [(ds, vid, model, relax_mode, bounds, cfg, seed, relax) for vid in ids]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_calibrate_one, tasks))
    return [_calibrate_one(t) for t in tasks]


def write_results(results: Sequence[CalibrationResult], path) -> None:
    """One row per vehicle: id, model, relax mode, parameters, MSE and flags."""
    names: list[str] = []
    for r in results:
        names += [n for n in r.names if n not in names]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["vehicle_id", "model", "relax_mode", *names, "mse", "realistic_acc",
                    "collisions", "n_lc", "merge"])
        for r in results:
            p = r.param_dict
            w.writerow([r.vehicle_id, r.model, r.relax_mode,
                        *[repr(p[n]) if n in p else "" for n in names], repr(r.mse),
                        int(r.realistic), r.collisions, r.n_lc, int(r.merge)])


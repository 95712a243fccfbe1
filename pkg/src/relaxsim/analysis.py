"""Closed-form leader-change responses and time-to-equilibrium estimates.

For the first order linear model ``v = beta1 (s - beta2)`` a follower that
suddenly finds itself ``gamma_s`` closer to its leader has an exponential
speed recovery; with relaxation it instead drives at a nearly constant reduced
speed for the relaxation time and only then recovers.  These closed forms are
the oracles that the simulated responses are checked against.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .cf_models import CFParams, ModelKind, equilibrium_headway
from .dynamics import follow_kernel
from .relaxation import RelaxationConfig, VehicleSnapshot, gammas_on_merge

DEFAULT_A_TOL = 1e-6
LINEAR_NEWELL_FIG5 = CFParams(ModelKind.LINEAR_NEWELL, (2 / 3, 2.0))
LINEAR_SECOND_ORDER_FIG5 = CFParams(ModelKind.LINEAR_SECOND_ORDER, (0.06, -0.55, 0.45, 0.14))

# (relax time, TTE, DT) for the IDM merge scenario (15 m, 29 m/s, leader 29 m/s)
TABLE6_REFERENCE = ((0.0, 24.3, 1.8), (2.0, 25.5, 3.5), (4.0, 26.7, 5.4),
                    (7.0, 28.5, 8.2), (10.0, 30.3, 10.9), (15.0, 33.4, 15.4))


class AnalysisError(RuntimeError):
    pass


@dataclass(frozen=True)
class Scenario:
    init_headway: float
    init_speed: float
    leader_speed: float


@dataclass(frozen=True)
class TTEDTReport:
    tte: float
    dt: float
    delta: float


@dataclass
class Profile:
    t: np.ndarray
    speed: np.ndarray
    accel: np.ndarray
    headway: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "speed", "accel"])
            for row in zip(self.t, self.speed, self.accel):
                w.writerow([f"{x:.6f}" for x in row])


def newell_baseline_speed_profile(t, gamma_s: float, beta1: float, v: float):
    t = np.asarray(t, dtype=float)
    return v - gamma_s * beta1 * np.exp(-beta1 * t)


def newell_relaxed_speed_profile(t, gamma_s: float, c: float, beta1: float, v: float):
    """Speed of a relaxed linear-Newell follower after a leader change at ``t = 0``.

    Before ``c`` the follower tends to ``v - gamma_s/c``; afterwards it decays
    to ``v`` at rate ``beta1``, with the constant chosen for continuity at ``c``.
    """
    if c <= 0:
        raise AnalysisError(f"relaxation time must be positive, got {c}")
    t = np.asarray(t, dtype=float)
    during = -(gamma_s - c * v) / c + gamma_s / c * np.exp(-beta1 * t)
    alpha1 = gamma_s / c * (math.exp(beta1 * c) - 1.0)
    after = v - alpha1 * np.exp(-beta1 * t)
    out = np.where(t < c, during, after)
    return out if out.ndim else float(out)


def tte_closed_form(gamma_s: float, beta1: float, c: float, delta: float, relaxed: bool) -> float:
    if relaxed:
        arg = gamma_s / (delta * c)
        return c + math.log(arg) / beta1 if arg > 1 else 0.0
    arg = beta1 * gamma_s / delta
    return math.log(arg) / beta1 if arg > 1 else 0.0


def simulate_leader_change(p: CFParams, relax: RelaxationConfig, scenario: Scenario, *,
                           gamma: Optional[tuple[float, float]] = None, dt: float = 0.1,
                           horizon: float = 600.0) -> Profile:
    """Follower behind a constant speed leader, leader change just before ``t = 0``.

    ``gamma`` gives the relaxation amounts directly; by default they follow the
    merge rule (no previous leader).
    """
    n = int(round(horizon / dt))
    vl = scenario.leader_speed
    rear = scenario.init_headway + vl * dt * np.arange(n)
    speed = np.full(n, vl)
    if gamma is None:
        gamma = gammas_on_merge(scenario.init_speed, VehicleSnapshot(scenario.init_headway, vl),
                                0.0, p)
    c_s, c_v = relax.durations
    if relax.enabled:
        ev = (np.array([-dt]), np.array([gamma[0]]), np.array([gamma[1]]),
              np.zeros(1, dtype=np.bool_), np.array([-1], dtype=np.int64), np.zeros(1), np.zeros(1))
    else:
        z = np.zeros(0)
        ev = (z, z, z, np.zeros(0, dtype=np.bool_), np.zeros(0, dtype=np.int64), z, z)
    x = np.empty(n)
    v = np.empty(n)
    a = np.empty(n)
    follow_kernel(p.code, p.packed, 0.0, scenario.init_speed, dt, n, 0.0, rear, speed, *ev,
                  c_s, c_v, relax.positive_only, relax.safeguard, relax.safeguard_alpha,
                  relax.safeguard_beta, relax.safeguard_eps, False, 0.0, 1.0, x, v, a)
    return Profile(dt * np.arange(n), v, a, rear - x)


def tte_dt_from_profile(prof: Profile, v_eq: float, delta: float, dt: float,
                        a_tol: float = DEFAULT_A_TOL) -> TTEDTReport:
    off = np.nonzero(np.abs(prof.speed - v_eq) >= delta)[0]
    if len(off) and off[-1] == len(prof.speed) - 1:
        raise AnalysisError("follower did not settle within the horizon")
    n_tte = int(off[-1]) + 1 if len(off) else 0
    # forward differences: first order models log the jump into each step instead
    fwd = np.diff(prof.speed) / dt
    decel = int(np.count_nonzero(fwd[:n_tte] < -a_tol))
    return TTEDTReport(n_tte * dt, decel * dt, delta)


def estimate_tte_dt(p: CFParams, relax: RelaxationConfig, scenario: Scenario, delta: float,
                    dt: float = 0.1, *, horizon: float = 600.0,
                    a_tol: float = DEFAULT_A_TOL) -> TTEDTReport:
    """Time to come within ``delta`` of the leader speed for good, and time spent braking."""
    prof = simulate_leader_change(p, relax, scenario, dt=dt, horizon=horizon)
    return tte_dt_from_profile(prof, scenario.leader_speed, delta, dt, a_tol)


def fit_tte_delta(p: CFParams, scenario: Scenario, target_tte: float, dt: float = 0.1,
                  horizon: float = 600.0) -> float:
    """Speed tolerance that makes the unrelaxed TTE equal ``target_tte``."""
    prof = simulate_leader_change(p, RelaxationConfig(0.0), scenario, dt=dt, horizon=horizon)
    err = np.abs(prof.speed - scenario.leader_speed)
    n = int(round(target_tte / dt))
    if not 0 < n < len(err):
        raise AnalysisError(f"target TTE {target_tte} outside the simulated horizon")
    # TTE(delta) = target when the last frame with err >= delta is n - 1
    hi = float(err[n - 1])
    lo = float(err[n:].max())
    if not lo < hi:
        raise AnalysisError(f"no tolerance gives TTE {target_tte}")
    return 0.5 * (lo + hi)


def table6(p: Optional[CFParams] = None, relax_times: Sequence[float] = (0, 2, 4, 7, 10, 15),
           scenario: Scenario = Scenario(15.0, 29.0, 29.0), delta: Optional[float] = None,
           dt: float = 0.1, target_tte: float = 24.3):
    """TTE/DT rows for a merge into a short gap; ``delta`` fitted on the unrelaxed row if absent."""
    p = p or CFParams.idm()
    if delta is None:
        delta = fit_tte_delta(p, scenario, target_tte, dt)
    rows = []
    for c in relax_times:
        rep = estimate_tte_dt(p, RelaxationConfig(float(c)), scenario, delta, dt)
        rows.append((float(c), rep.tte, rep.dt))
    return delta, rows


def fig5_profiles(model: str, relaxed: bool, *, gamma_s: float = 17.0, v: float = 20.0,
                  c: float = 15.0, dt: float = 0.01, horizon: float = 40.0) -> Profile:
    """Follower at equilibrium whose new leader is ``gamma_s`` closer, both leaders at ``v``."""
    kind = ModelKind.parse(model)
    if kind == ModelKind.LINEAR_NEWELL:
        p = LINEAR_NEWELL_FIG5
    elif kind == ModelKind.LINEAR_SECOND_ORDER:
        p = LINEAR_SECOND_ORDER_FIG5
    else:
        raise AnalysisError(f"fig5 covers the two linear models, not {kind.name}")
    s0 = equilibrium_headway(v, p) - gamma_s
    relax = RelaxationConfig(c if relaxed else 0.0)
    return simulate_leader_change(p, relax, Scenario(s0, v, v), gamma=(gamma_s, 0.0), dt=dt,
                                  horizon=horizon)


def write_fig5(out_dir, **kw) -> list[Path]:
    out_dir = Path(out_dir)
    paths = []
    for model in ("linear_newell", "linear_second_order"):
        for relaxed in (False, True):
            path = out_dir / f"fig5_{model}_{'relaxed' if relaxed else 'baseline'}.csv"
            fig5_profiles(model, relaxed, **kw).to_csv(path)
            paths.append(path)
    return paths

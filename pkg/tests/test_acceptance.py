"""End-to-end acceptance checks, one test per criterion.

Each test records a single PASS/FAIL line; the lines are printed together when
the module finishes.  The capacity sweep behind criteria 4 and 5 takes several
minutes and is marked ``slow`` (deselect with ``-m "not slow"``).
"""

import subprocess
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from relaxsim.analysis import (LINEAR_NEWELL_FIG5, TABLE6_REFERENCE, Scenario, estimate_tte_dt,
                               fig5_profiles, newell_relaxed_speed_profile, table6,
                               tte_closed_form)
from relaxsim.calibration import SyntheticScenario, calibrate_dataset, make_synthetic_dataset
from relaxsim.cf_models import CFParams, equilibrium_headway, max_flow_speed
from relaxsim.measurement import capacity_drop_sweep, summarize
from relaxsim.relaxation import RelaxationConfig, RelaxMode
from relaxsim.simulation import SimConfig

ROOT = Path(__file__).resolve().parent.parent
LINES: dict[int, str] = {}


@pytest.fixture(scope="module", autouse=True)
def report(request):
    yield
    tr = request.config.pluginmanager.getplugin("terminalreporter")
    out = tr.write_line if tr is not None else print
    out("")
    for n in sorted(LINES):
        out(LINES[n])


def record(n, ok, detail):
    LINES[n] = f"ACCEPTANCE {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    return ok


# -- 1 -----------------------------------------------------------------------

def test_criterion_1_closed_form_oracle():
    dt = 0.001
    gs, c, v, b1 = 17.0, 15.0, 20.0, 2 / 3
    prof = fig5_profiles("linear_newell", True, gamma_s=gs, v=v, c=c, dt=dt)
    err = float(np.max(np.abs(prof.speed - newell_relaxed_speed_profile(prof.t, gs, c, b1, v))))
    sc = Scenario(equilibrium_headway(v, LINEAR_NEWELL_FIG5) - gs, v, v)
    rel = estimate_tte_dt(LINEAR_NEWELL_FIG5, RelaxationConfig(c), sc, 0.1, dt, horizon=60)
    base = estimate_tte_dt(LINEAR_NEWELL_FIG5, RelaxationConfig(0.0), sc, 0.1, dt, horizon=60)
    tte_rel = tte_closed_form(gs, b1, c, 0.1, relaxed=True)
    tte_base = tte_closed_form(gs, b1, c, 0.1, relaxed=False)
    ok = (err < 0.05 and abs(rel.tte - tte_rel) <= 2 * dt and abs(base.tte - tte_base) <= 2 * dt
          and abs(rel.dt - c) <= 2 * dt)
    assert record(1, ok, f"max speed error {err:.4f} m/s; TTE {rel.tte:.3f} vs {tte_rel:.3f}, "
                         f"{base.tte:.3f} vs {tte_base:.3f}; DT {rel.dt:.3f} vs {c}")


# -- 2 -----------------------------------------------------------------------

def test_criterion_2_table6():
    delta, rows = table6()
    errs = []
    for (c, tte, d), (_, tte_ref, d_ref) in zip(rows[1:], TABLE6_REFERENCE[1:]):
        errs += [abs(tte / tte_ref - 1), abs(d / d_ref - 1)]
    worst = max(errs)
    text = ", ".join(f"{c:g}:{t:.1f}/{d:.1f}" for c, t, d in rows)
    assert record(2, worst <= 0.10, f"delta {delta:.4f}; {text}; worst rel. error {worst:.1%}")


# -- 3 -----------------------------------------------------------------------

def test_criterion_3_equilibrium():
    p = CFParams.idm()
    s29 = equilibrium_headway(29.0, p)
    v_star = max_flow_speed(p, 3.0)
    ok = 54.0 <= s29 <= 56.0 and 18.5 <= v_star <= 19.2
    assert record(3, ok, f"s_eq(29) = {s29:.2f} m; max-flow speed {v_star:.2f} m/s")


# -- 4 and 5 -----------------------------------------------------------------

RAMP = 400.0
RELAX_TIMES = (0.0, 2.0, 4.0, 7.0, 10.0)
SEEDS = (0, 1, 2)


@pytest.fixture(scope="module")
def sweep():
    variants = [(c, RelaxMode.BOTH_SIGNS) for c in RELAX_TIMES] + [(10.0, RelaxMode.POSITIVE_ONLY)]
    configs = [replace(SimConfig(), relax=RelaxationConfig(c, mode), seed=s, record_every=0)
               for c, mode in variants for s in SEEDS]
    reports = capacity_drop_sweep(configs, RAMP, duration=1800.0)
    out = {}
    for k, key in enumerate(variants):
        out[key] = reports[k * len(SEEDS):(k + 1) * len(SEEDS)]
    return out


@pytest.mark.slow
def test_criterion_4_capacity_drop_trends(sweep):
    both = {c: sweep[(c, RelaxMode.BOTH_SIGNS)] for c in RELAX_TIMES}
    mean = {c: summarize(r) for c, r in both.items()}
    # seed noise: standard error of the mean discharge over seeds
    se = {c: float(np.std([r.discharge for r in rs], ddof=1) / np.sqrt(len(rs)))
          for c, rs in both.items()}
    period = {c: float(np.nanmean([r.period_min for r in rs])) for c, rs in both.items()}
    cap0 = mean[0.0]["capacity"]
    a = all(mean[c]["capacity"] >= 1.05 * cap0 for c in RELAX_TIMES[1:])
    b = all(mean[hi]["discharge"] >= mean[lo]["discharge"] - 2 * np.hypot(se[lo], se[hi])
            for lo, hi in zip(RELAX_TIMES, RELAX_TIMES[1:]))
    c_ = 5.0 <= mean[10.0]["drop_pct"] <= 15.0 and 14.0 <= mean[2.0]["drop_pct"] <= 25.0
    d = period[10.0] > period[0.0]
    table = "; ".join(f"c={c:g}: cap {mean[c]['capacity']:.0f}, dis {mean[c]['discharge']:.0f}, "
                      f"drop {mean[c]['drop_pct']:.1f}%, period {period[c]:.2f}"
                      for c in RELAX_TIMES)
    parts = f"(a) {'ok' if a else 'no'} (b) {'ok' if b else 'no'} (c) {'ok' if c_ else 'no'} " \
            f"(d) {'ok' if d else 'no'}"
    assert record(4, a and b and c_ and d, f"{parts}; {table}")


@pytest.mark.slow
def test_criterion_5_positive_only(sweep):
    pos = summarize(sweep[(10.0, RelaxMode.POSITIVE_ONLY)])["drop_pct"]
    both = summarize(sweep[(10.0, RelaxMode.BOTH_SIGNS)])["drop_pct"]
    assert record(5, pos <= both, f"drop at c=10: positive-only {pos:.1f}% vs both signs "
                                  f"{both:.1f}%")


# -- 6 -----------------------------------------------------------------------

def test_criterion_6_calibration_self_consistency():
    ds = make_synthetic_dataset(SyntheticScenario(n_followers=20), CFParams.idm(), c=10.0, seed=0)
    relaxed = calibrate_dataset(ds, "IDM", "1p")
    plain = calibrate_dataset(ds, "IDM", "none")
    med = float(np.median([r.mse for r in relaxed]))
    c_med = float(np.median([r.param_dict["c"] for r in relaxed]))
    lc_rel = float(np.median([r.mse for r in relaxed if r.n_lc > 0]))
    lc_none = float(np.median([r.mse for r in plain if r.n_lc > 0]))
    ratio = lc_none / max(lc_rel, 1e-300)
    ok = med < 0.01 and abs(c_med / 10.0 - 1) <= 0.15 and lc_none >= 5 * lc_rel
    assert record(6, ok, f"median MSE {med:.2e} m^2; median c {c_med:.3f} s; LC vehicles "
                         f"without relaxation {lc_none:.3f} m^2 ({ratio:.1e} x worse)")


# -- 7 -----------------------------------------------------------------------

NAMED_PROPERTIES = ("conservation or identical_seeds or determinism or byte_identical "
                    "or q_over_k or additiv or expir or continu or safety or incentive")


def test_criterion_7_property_suites():
    base = [sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
            "--ignore", str(ROOT / "tests" / "test_acceptance.py"), str(ROOT / "tests")]
    runs = [subprocess.run(base + sel, capture_output=True, text=True, cwd=ROOT)
            for sel in (["-m", "hypothesis"], ["-k", NAMED_PROPERTIES])]
    tails = [r.stdout.strip().splitlines()[-1] if r.stdout.strip() else "no output" for r in runs]
    ok = all(r.returncode == 0 for r in runs)
    assert record(7, ok, f"randomized properties: {tails[0]}; named invariants: {tails[1]}")

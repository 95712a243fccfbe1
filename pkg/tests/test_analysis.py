import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relaxsim.analysis import (LINEAR_NEWELL_FIG5, TABLE6_REFERENCE, AnalysisError, Scenario,
                               estimate_tte_dt, fig5_profiles, fit_tte_delta,
                               newell_baseline_speed_profile, newell_relaxed_speed_profile,
                               simulate_leader_change, table6, tte_closed_form, write_fig5)
from relaxsim.cf_models import CFParams, ModelKind, equilibrium_headway
from relaxsim.relaxation import RelaxationConfig

B1, GS, V, C = 2 / 3, 17.0, 20.0, 15.0


def newell_scenario(p=LINEAR_NEWELL_FIG5, gamma_s=GS, v=V):
    return Scenario(equilibrium_headway(v, p) - gamma_s, v, v)


class TestClosedForms:
    def test_baseline_initial_speed(self):
        assert newell_baseline_speed_profile(0.0, GS, B1, V) == pytest.approx(20 - 17 * 2 / 3)

    def test_relaxed_initial_speed_is_nearly_v(self):
        assert newell_relaxed_speed_profile(0.0, GS, C, B1, V) == pytest.approx(V)

    def test_plateau(self):
        assert newell_relaxed_speed_profile(10.0, GS, C, B1, V) == pytest.approx(
            -(GS - C * V) / C, abs=2e-3)

    def test_zero_gamma_is_constant(self):
        t = np.linspace(0, 60, 7)
        assert np.allclose(newell_relaxed_speed_profile(t, 0.0, C, B1, V), V)

    def test_long_run_limit(self):
        assert newell_relaxed_speed_profile(500.0, GS, C, B1, V) == pytest.approx(V)

    def test_continuous_at_c(self):
        a = newell_relaxed_speed_profile(C - 1e-9, GS, C, B1, V)
        b = newell_relaxed_speed_profile(C, GS, C, B1, V)
        assert a == pytest.approx(b, abs=1e-6)

    def test_nonpositive_c(self):
        with pytest.raises(AnalysisError):
            newell_relaxed_speed_profile(1.0, GS, 0.0, B1, V)

    def test_tte_baseline(self):
        assert tte_closed_form(GS, B1, C, 0.1, relaxed=False) == pytest.approx(
            1.5 * math.log(113.333), abs=1e-3)
        assert tte_closed_form(GS, B1, C, 0.1, relaxed=False) == pytest.approx(7.09, abs=0.01)

    def test_tte_relaxed(self):
        assert tte_closed_form(GS, B1, C, 0.1, relaxed=True) == pytest.approx(18.64, abs=0.01)

    def test_tte_already_settled(self):
        assert tte_closed_form(0.1, B1, C, 0.1, relaxed=False) == 0.0

    @given(st.floats(1, 60), st.floats(0.2, 2), st.floats(0.01, 1))
    def test_relaxed_tte_below_baseline_plus_c(self, gamma_s, beta1, delta):
        c = 1 / beta1 + 1.0 + gamma_s / 10
        assert (tte_closed_form(gamma_s, beta1, c, delta, True)
                < tte_closed_form(gamma_s, beta1, c, delta, False) + c)


class TestOracleEquivalence:
    def test_relaxed_profile(self):
        prof = fig5_profiles("linear_newell", True, dt=0.001)
        ref = newell_relaxed_speed_profile(prof.t, GS, C, B1, V)
        assert np.max(np.abs(prof.speed - ref)) < 0.05

    def test_baseline_profile(self):
        prof = fig5_profiles("linear_newell", False, dt=0.001)
        ref = newell_baseline_speed_profile(prof.t, GS, B1, V)
        assert np.max(np.abs(prof.speed - ref)) < 0.05

    @pytest.mark.parametrize("relaxed", [False, True])
    def test_tte_matches_closed_form(self, relaxed):
        dt = 0.001
        rep = estimate_tte_dt(LINEAR_NEWELL_FIG5, RelaxationConfig(C if relaxed else 0.0),
                              newell_scenario(), 0.1, dt, horizon=60)
        assert abs(rep.tte - tte_closed_form(GS, B1, C, 0.1, relaxed)) <= 2 * dt

    def test_dt_equals_c_when_relaxed(self):
        dt = 0.001
        rep = estimate_tte_dt(LINEAR_NEWELL_FIG5, RelaxationConfig(C), newell_scenario(), 0.1,
                              dt, horizon=60)
        assert abs(rep.dt - C) <= 2 * dt

    def test_dt_zero_when_unrelaxed(self):
        rep = estimate_tte_dt(LINEAR_NEWELL_FIG5, RelaxationConfig(0.0), newell_scenario(), 0.1,
                              0.001, horizon=60)
        assert rep.dt == 0.0

    @settings(max_examples=15)
    @given(st.floats(2, 40), st.floats(3, 30))
    def test_dt_le_tte(self, gamma_s, c):
        rep = estimate_tte_dt(LINEAR_NEWELL_FIG5, RelaxationConfig(c),
                              newell_scenario(gamma_s=gamma_s), 0.1, 0.01, horizon=120)
        assert 0.0 <= rep.dt <= rep.tte


class TestTable6:
    def test_fitted_row_matches(self):
        delta, rows = table6()
        assert rows[0][1:] == pytest.approx((24.3, 1.8), abs=1e-9)
        assert 0 < delta < 1

    def test_other_rows_within_ten_percent(self):
        _, rows = table6()
        for (c, tte, dt), (c_ref, tte_ref, dt_ref) in zip(rows[1:], TABLE6_REFERENCE[1:]):
            assert c == c_ref
            assert tte == pytest.approx(tte_ref, rel=0.10)
            assert dt == pytest.approx(dt_ref, rel=0.10)

    def test_frozen_values(self):
        delta, rows = table6()
        assert delta == pytest.approx(0.55282, abs=1e-4)
        assert np.allclose([r[1:] for r in rows],
                           [(24.3, 1.8), (25.7, 3.5), (27.0, 5.3), (28.9, 8.0), (30.7, 10.9),
                            (33.7, 15.6)], atol=1e-9)

    def test_settled_follower(self):
        p = CFParams.idm()
        s = equilibrium_headway(25.0, p)
        rep = estimate_tte_dt(p, RelaxationConfig(0.0), Scenario(s, 25.0, 25.0), 0.1)
        assert (rep.tte, rep.dt) == (0.0, 0.0)

    def test_no_convergence(self):
        p = CFParams.idm()
        with pytest.raises(AnalysisError):
            estimate_tte_dt(p, RelaxationConfig(0.0), Scenario(15.0, 29.0, 29.0), 0.1,
                            horizon=5.0)

    def test_unreachable_target(self):
        with pytest.raises(AnalysisError):
            fit_tte_delta(CFParams.idm(), Scenario(15.0, 29.0, 29.0), 500.0, horizon=100.0)


class TestFig5:
    def test_unrelaxed_first_speed(self):
        prof = fig5_profiles("linear_newell", False, dt=0.01)
        assert prof.speed[0] == pytest.approx(8.67, abs=0.01)

    def test_plateau(self):
        prof = fig5_profiles("linear_newell", True, dt=0.01)
        mid = (prof.t > 6 / B1) & (prof.t < C)
        assert np.allclose(prof.speed[mid], 18.87, atol=0.02)

    @pytest.mark.parametrize("model", ["linear_newell", "linear_second_order"])
    @pytest.mark.parametrize("relaxed", [False, True])
    def test_settles(self, model, relaxed):
        prof = fig5_profiles(model, relaxed, horizon=200.0, dt=0.05)
        assert prof.speed[-1] == pytest.approx(V, abs=1e-3)

    def test_other_models_rejected(self):
        with pytest.raises(AnalysisError):
            fig5_profiles("IDM", True)

    def test_csv_columns(self, tmp_path):
        paths = write_fig5(tmp_path, dt=0.1, horizon=5.0)
        assert len(paths) == 4
        head = paths[0].read_text().splitlines()
        assert head[0] == "t,speed,accel"
        assert len(head) == 51


def test_explicit_gamma_overrides_merge_rule():
    p = CFParams(ModelKind.LINEAR_NEWELL, (2 / 3, 2.0))
    sc = newell_scenario()
    a = simulate_leader_change(p, RelaxationConfig(C), sc, dt=0.01, horizon=20)
    b = simulate_leader_change(p, RelaxationConfig(C), sc, gamma=(GS, 0.0), dt=0.01, horizon=20)
    assert np.allclose(a.speed, b.speed)

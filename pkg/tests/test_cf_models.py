import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from relaxsim.cf_models import (CFError, CFInput, CFParams, ModelKind, NoEquilibriumError,
                                equilibrium_headway, equilibrium_speed, evaluate, free_flow,
                                idm_accel, linear_newell_rate, linear_second_order_accel,
                                max_flow_speed, newell_target_position, ovm_accel,
                                ovm_optimal_velocity, ska_relaxed_time_headway)

OVM = CFParams(ModelKind.OVM, (16.8, 0.086, 1.545, 2.0, 0.175))
NEWELL = CFParams(ModelKind.NEWELL, (7.0, 1.0, 30.0))
LNEWELL = CFParams(ModelKind.LINEAR_NEWELL, (2 / 3, 2.0))
LSO = CFParams(ModelKind.LINEAR_SECOND_ORDER, (0.06, -0.55, 0.45, 0.14))


class TestIDM:
    def test_near_zero_at_equilibrium_headway(self, idm):
        assert abs(idm_accel(CFInput(54.6, 29.0, 29.0), idm)) < 0.01

    def test_free_road_limit(self, idm):
        assert idm_accel(CFInput(1e12, 0.0, 0.0), idm) == pytest.approx(1.1)

    def test_hand_value(self, idm):
        assert idm_accel(CFInput(20.0, 15.0, 15.0), idm) == pytest.approx(-0.2083, abs=5e-5)

    def test_rejects_nonfinite_and_nonpositive_headway(self, idm):
        with pytest.raises(CFError):
            idm_accel(CFInput(float("nan"), 1.0, 1.0), idm)
        with pytest.raises(CFError):
            idm_accel(CFInput(0.0, 1.0, 1.0), idm)

    def test_strictly_decreasing_in_own_speed_when_not_slower_than_leader(self, idm):
        for s in (5.0, 20.0, 60.0):
            for vl in (0.0, 15.0, 30.0):
                a = [idm_accel(CFInput(s, v, vl), idm) for v in np.linspace(vl, 34, 80)]
                assert np.all(np.diff(a) < 0)

    def test_not_monotone_below_a_much_faster_leader(self, idm):
        # the desired gap shrinks faster than v grows; kept as a documented counterexample
        lo = idm_accel(CFInput(20.0, 0.0, 15.0), idm)
        hi = idm_accel(CFInput(20.0, 0.5, 15.0), idm)
        assert hi > lo


class TestOVM:
    @given(st.floats(1.0, 200.0))
    def test_zero_on_optimal_velocity(self, s):
        v = ovm_optimal_velocity(s, OVM)
        assert ovm_accel(CFInput(s, v, 0.0), OVM) == pytest.approx(0.0, abs=1e-12)

    def test_zero_optimal_speed_at_jam_spacing(self):
        c1, c2, c3, c4, c5 = OVM.values
        assert ovm_accel(CFInput(c5 / c2, 0.0, 0.0), OVM) == pytest.approx(0.0, abs=1e-12)

    def test_saturation_limit(self):
        c1, c2, c3, c4, c5 = OVM.values
        expect = c4 * c1 * (1 - math.tanh(-c3))
        assert ovm_accel(CFInput(1e6, 0.0, 0.0), OVM) == pytest.approx(expect)

    @given(st.floats(0.5, 300.0), st.floats(0.0, 40.0))
    def test_sign_follows_optimal_velocity_gap(self, s, v):
        a = ovm_accel(CFInput(s, v, 0.0), OVM)
        gap = ovm_optimal_velocity(s, OVM) - v
        assert np.sign(a) == np.sign(gap)


class TestNewell:
    def test_free_branch(self):
        assert newell_target_position(0.0, 100.0, 5.0, NEWELL) == pytest.approx(30.0)

    def test_congested_branch(self):
        p = CFParams(ModelKind.NEWELL, (2.0, 1.0, 10.0))
        assert newell_target_position(0.0, 10.0, 5.0, p) == pytest.approx(3.0)

    def test_branches_meet(self):
        p = CFParams(ModelKind.NEWELL, (2.0, 1.0, 10.0))
        # x_lead - l_lead - delta == vf * tau
        assert newell_target_position(0.0, 17.0, 5.0, p) == pytest.approx(10.0)

    def test_overlap_is_a_collision(self):
        with pytest.raises(CFError):
            newell_target_position(10.0, 12.0, 5.0, NEWELL)

    @given(st.floats(0.0, 1000.0), st.floats(0.1, 500.0))
    def test_never_past_leader_minus_shift(self, x, gap):
        x_lead = x + 5.0 + gap
        delta = NEWELL.values[0]
        assert newell_target_position(x, x_lead, 5.0, NEWELL) <= x_lead - 5.0 - delta + 1e-9


class TestLinearModels:
    def test_linear_newell_values(self):
        assert linear_newell_rate(CFInput(2.0, 0, 0), LNEWELL) == 0.0
        assert linear_newell_rate(CFInput(32.0, 0, 0), LNEWELL) == pytest.approx(20.0)
        assert linear_newell_rate(CFInput(49.0, 0, 0), LNEWELL) == pytest.approx(31.3333, abs=1e-4)

    def test_linear_second_order_values(self):
        s_eq = equilibrium_headway(20.0, LSO)
        assert linear_second_order_accel(CFInput(s_eq, 20.0, 20.0), LSO) == pytest.approx(0, abs=1e-12)
        a = linear_second_order_accel(CFInput(s_eq + 17.0, 20.0, 20.0), LSO)
        assert a == pytest.approx(1.02)
        zero = CFParams(ModelKind.LINEAR_SECOND_ORDER, (0, 0, 0, 0))
        assert linear_second_order_accel(CFInput(5.0, 3.0, 1.0), zero) == 0.0

    @given(st.lists(st.floats(-50, 50), min_size=6, max_size=6), st.floats(-3, 3))
    def test_superposition(self, xs, k):
        s1, v1, l1, s2, v2, l2 = xs
        b = LSO.values
        f = lambda s, v, l: linear_second_order_accel(CFInput(s, v, l), LSO) - b[3]
        lhs = f(s1 + k * s2, v1 + k * v2, l1 + k * l2)
        rhs = f(s1, v1, l1) + k * f(s2, v2, l2)
        assert lhs == pytest.approx(rhs, abs=1e-12 * (1 + abs(lhs)) + 1e-11)
        b1, b2 = LNEWELL.values
        g = lambda s: linear_newell_rate(CFInput(s, 0, 0), LNEWELL) + b1 * b2
        assert g(s1 + k * s2) == pytest.approx(g(s1) + k * g(s2), abs=1e-10)


class TestEquilibrium:
    def test_idm_headway_at_29(self, idm):
        assert equilibrium_headway(29.0, idm) == pytest.approx(54.6, abs=0.05)

    def test_linear_newell_headway(self):
        assert equilibrium_headway(20.0, LNEWELL) == pytest.approx(32.0)

    @pytest.mark.parametrize("p,jam", [(CFParams.idm(), 2.0), (OVM, 0.175 / 0.086), (LNEWELL, 2.0),
                                       (NEWELL, 7.0)])
    def test_zero_speed_gives_jam_spacing(self, p, jam):
        assert equilibrium_headway(0.0, p) == pytest.approx(jam)

    def test_no_equilibrium_at_max_speed(self, idm):
        with pytest.raises(NoEquilibriumError):
            equilibrium_headway(35.0, idm)

    def test_speed_inverse(self, idm):
        assert equilibrium_speed(54.6, idm) == pytest.approx(29.0, abs=0.02)
        assert equilibrium_speed(2.0, idm) == 0.0
        assert equilibrium_speed(1e6, idm) == pytest.approx(35.0, rel=1e-3)

    @pytest.mark.parametrize("p", [CFParams.idm(), OVM, NEWELL, LNEWELL, LSO])
    def test_round_trip(self, p, rng):
        vmax = p.max_speed if math.isfinite(p.max_speed) else 40.0
        for v in rng.uniform(0.01, 0.999 * vmax, 100):
            s = equilibrium_headway(v, p)
            assert equilibrium_speed(s, p) == pytest.approx(v, rel=1e-6)

    def test_max_flow_speed(self, idm):
        assert 18.5 <= max_flow_speed(idm, 3.0) <= 19.2


class TestMisc:
    def test_ska_update(self):
        assert ska_relaxed_time_headway(1.3, 1.3, 10.0, 0.1) == 1.3
        assert ska_relaxed_time_headway(0.5, 1.3, 10.0, 0.1) == pytest.approx(0.508)
        t, prev = 0.5, []
        for _ in range(500):
            prev.append(t)
            t = ska_relaxed_time_headway(t, 1.3, 10.0, 0.1)
        assert np.all(np.diff(prev) > 0) and t < 1.3

    def test_evaluate_dispatch(self, idm):
        inp = CFInput(20.0, 15.0, 15.0)
        assert evaluate(inp, idm) == pytest.approx(idm_accel(inp, idm))
        assert evaluate(CFInput(32.0, 0, 0), LNEWELL) == pytest.approx(20.0)

    def test_free_flow(self, idm):
        assert free_flow(0.0, idm) == pytest.approx(1.1)
        assert free_flow(35.0, idm) == pytest.approx(0.0)

    def test_parameter_validation(self):
        with pytest.raises(CFError):
            CFParams.idm(c4=0.0)
        with pytest.raises(CFError):
            CFParams(ModelKind.NEWELL, (1.0, 2.0))
        assert ModelKind.parse("linear-newell") == ModelKind.LINEAR_NEWELL

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from relaxsim.cf_models import CFParams, ModelKind
from relaxsim.lane_changing import (ACTIVATE_LEFT, ACTIVATE_RIGHT, CHANGE_LEFT, CHANGE_RIGHT,
                                    NONE, LCMode, LCParams, LCVehicle, SideView, check_safety,
                                    discretionary_step, h, mandatory_step, mobil_incentive,
                                    safety_threshold, tactical_cooperation)

IDM = CFParams.idm()
P = LCParams()
VMAX = IDM.max_speed
SELFISH = LCParams(d4=0.0)  # incentive unaffected by a tailgating side follower


def veh(pos, speed=20.0, **kw):
    return LCVehicle(pos, speed, IDM, **kw)


class FixedRng:
    """Returns the same uniform draw every time."""

    def __init__(self, u):
        self.u = u
        self.calls = 0

    def random(self):
        self.calls += 1
        return self.u


def congested_view(ego, side="left"):
    # slow leader just ahead in the current lane, open target lane
    return SideView(side, leader=veh(ego.pos + 23.0, 5.0), follower=None, side_leader=None,
                    side_follower=None)


class TestThreshold:
    def test_at_max_speed(self):
        assert safety_threshold(VMAX, VMAX, P) == pytest.approx(-8.0)

    def test_at_standstill(self):
        assert safety_threshold(0.0, VMAX, P) == pytest.approx(-20.0)

    def test_midpoint(self):
        assert safety_threshold(VMAX / 2, VMAX, P) == pytest.approx(-14.0)

    @given(st.floats(0, VMAX), st.floats(0, VMAX))
    def test_monotone(self, v1, v2):
        lo, hi = sorted((v1, v2))
        assert safety_threshold(lo, VMAX, P) <= safety_threshold(hi, VMAX, P)


class TestSafety:
    def test_huge_gaps(self):
        ego = veh(500.0, VMAX)
        assert check_safety(ego, veh(2000.0, VMAX), veh(-1000.0, VMAX), P)

    def test_tailgating_side_follower(self):
        ego = veh(500.0, 20.0)
        res = check_safety(ego, None, veh(500.0 - ego.length - 1.0, 20.0), P)
        assert not res
        assert not res.follower_safe and res.ego_safe

    def test_no_side_follower(self):
        ego = veh(500.0, 20.0)
        res = check_safety(ego, veh(560.0, 20.0), None, P)
        assert res.safe and res.follower_accel is None

    def test_overlap_is_unsafe_not_error(self):
        ego = veh(500.0, 20.0)
        res = check_safety(ego, veh(501.0, 20.0), None, P)
        assert not res.ego_safe
        assert res.ego_accel == -np.inf


class TestIncentive:
    def test_symmetric_lanes(self):
        ego = veh(500.0)
        ahead, behind = veh(540.0), veh(460.0)
        assert not mobil_incentive(ego, ahead, behind, veh(540.0), veh(460.0), "left", P)

    def test_empty_target_lane(self):
        ego = veh(500.0, 15.0)
        assert mobil_incentive(ego, veh(523.0, 15.0), None, None, None, "left", P)

    def test_right_bias_alone_is_not_enough(self):
        ego = veh(500.0)
        ahead, behind = veh(540.0), veh(460.0)
        assert not mobil_incentive(ego, ahead, behind, veh(540.0), veh(460.0), "right", P)
        # bias above the threshold flips it
        eager = LCParams(d6=0.7)
        assert mobil_incentive(ego, ahead, behind, veh(540.0), veh(460.0), "right", eager)

    def test_bad_side(self):
        with pytest.raises(ValueError):
            mobil_incentive(veh(0.0), None, None, None, None, "up", P)

    @given(st.floats(10, 80), st.floats(5, 30), st.floats(10, 80), st.floats(5, 30),
           st.floats(5, 80), st.floats(0, 30), st.floats(5, 80), st.floats(0, 30))
    def test_zero_politeness_ignores_followers(self, g1, v1, g2, v2, f1, fv1, f2, fv2):
        p = LCParams(d4=0.0)
        ego = veh(500.0, 20.0)
        lead, side_lead = veh(500.0 + 3 + g1, v1), veh(500.0 + 3 + g2, v2)
        base = mobil_incentive(ego, lead, None, side_lead, None, "left", p)
        other = mobil_incentive(ego, lead, veh(500.0 - 3 - f1, fv1), side_lead,
                                veh(500.0 - 3 - f2, fv2), "left", p)
        assert base == other


class TestDiscretionary:
    def test_cooldown(self):
        ego = veh(500.0, 15.0)
        ego.lc.cooldown = 3
        rng = FixedRng(0.0)
        assert discretionary_step(ego, [congested_view(ego)], rng, P) == (NONE, None)
        assert ego.lc.cooldown == 2 and rng.calls == 0

    def test_sample_above_d7(self):
        ego = veh(500.0, 15.0)
        assert discretionary_step(ego, [congested_view(ego)], FixedRng(0.5), P)[0] == NONE

    def test_change_when_safe(self):
        ego = veh(500.0, 15.0)
        dec, view = discretionary_step(ego, [congested_view(ego)], FixedRng(0.0), P)
        assert dec == CHANGE_LEFT and view.side == "left"
        assert ego.lc.cooldown == P.d9 and ego.lc.mode == LCMode.IDLE

    def test_right_change(self):
        ego = veh(500.0, 15.0)
        dec, _ = discretionary_step(ego, [congested_view(ego, "right")], FixedRng(0.0), P)
        assert dec == CHANGE_RIGHT

    def test_incentive_without_safety_activates(self):
        ego = veh(500.0, 15.0)
        view = congested_view(ego)
        view.side_follower = veh(500.0 - 4.0, 25.0)
        dec, _ = discretionary_step(ego, [view], FixedRng(0.0), SELFISH)
        assert dec == ACTIVATE_LEFT
        assert ego.lc.mode == LCMode.ACTIVATED and ego.lc.steps_left == P.d8
        assert ego.lc.tactical_adjust == P.a2

    def test_activated_evaluates_without_sampling(self):
        ego = veh(500.0, 15.0)
        view = congested_view(ego)
        view.side_follower = veh(500.0 - 4.0, 25.0)
        discretionary_step(ego, [view], FixedRng(0.0), SELFISH)
        # a1 gate may draw; the d7 gate must not block evaluation
        dec, _ = discretionary_step(ego, [view], FixedRng(0.99), SELFISH)
        assert dec == ACTIVATE_LEFT

    def test_activation_expires(self):
        ego = veh(500.0, 15.0)
        view = congested_view(ego)
        view.side_follower = veh(500.0 - 4.0, 25.0)
        discretionary_step(ego, [view], FixedRng(0.0), SELFISH)
        for _ in range(P.d8):
            discretionary_step(ego, [view], FixedRng(0.99), SELFISH)
        assert ego.lc.mode == LCMode.IDLE
        assert ego.lc.tactical_adjust == 0.0

    def test_d7_zero_never_changes(self):
        p = LCParams(d7=0.0)
        ego = veh(500.0, 15.0)
        rng = np.random.default_rng(1)
        for _ in range(500):
            assert discretionary_step(ego, [congested_view(ego)], rng, p)[0] == NONE

    @given(st.integers(0, 2**32 - 1), st.floats(3, 60), st.floats(0, 30), st.floats(3, 60),
           st.floats(0, 30), st.floats(2, 60), st.floats(0, 30), st.floats(0, 30))
    def test_changes_are_always_safe(self, seed, g_lead, v_lead, g_sl, v_sl, g_sf, v_sf, v):
        ego = veh(500.0, v)
        view = SideView("left", veh(503.0 + g_lead, v_lead), None, veh(503.0 + g_sl, v_sl),
                        veh(497.0 - g_sf, v_sf))
        dec, got = discretionary_step(ego, [view], np.random.default_rng(seed), LCParams(d7=1.0))
        if dec in (CHANGE_LEFT, CHANGE_RIGHT):
            res = check_safety(ego, got.side_leader, got.side_follower, P)
            assert res.follower_accel is None or res.follower_accel > res.threshold
            assert res.ego_accel is None or res.ego_accel > res.threshold


class TestMandatory:
    def test_immediate_change(self):
        ego = veh(1900.0, 20.0)
        view = SideView("left", None, None, veh(2000.0, 20.0), veh(1800.0, 20.0))
        ok, _ = mandatory_step(ego, view, P)
        assert ok and ego.lc.mode == LCMode.MANDATORY

    def test_blocked(self):
        ego = veh(1900.0, 20.0)
        sf = veh(1890.0, 25.0)
        view = SideView("left", None, None, veh(2000.0, 20.0), sf, veh(1850.0, 25.0))
        ok, res = mandatory_step(ego, view, P)
        assert not ok and not res.follower_safe
        assert ego.lc.tactical_adjust == P.a2
        assert ego.lc.cooperating_with is sf

    def test_empty_mainline(self):
        ok, _ = mandatory_step(veh(1900.0), SideView("left", None, None, None, None), P)
        assert ok

    @given(st.floats(1, 80), st.floats(0, 30), st.floats(1, 80), st.floats(0, 30),
           st.floats(0, 30))
    def test_deterministic(self, g_sl, v_sl, g_sf, v_sf, v):
        out = []
        for _ in range(2):
            ego = veh(1900.0, v)
            view = SideView("left", None, None, veh(1903.0 + g_sl, v_sl), veh(1897.0 - g_sf, v_sf))
            ok, res = mandatory_step(ego, view, P)
            out.append((ok, res.follower_accel, res.ego_accel, ego.lc.tactical_adjust))
        assert out[0] == out[1]


class TestTactical:
    def _res(self, fol_ok, ego_ok):
        ego = veh(1900.0, 20.0)
        sf = veh(1880.0, 20.0)
        view = SideView("left", None, None, veh(1950.0), sf, veh(1850.0))
        res = check_safety(ego, view.side_leader, view.side_follower, P)
        res.follower_safe, res.ego_safe = fol_ok, ego_ok
        res.safe = fol_ok and ego_ok
        return ego, view, res

    def test_follower_violated_mandatory(self):
        ego, view, res = self._res(False, True)
        adj, coop, coop_adj = tactical_cooperation(ego, view, res, LCMode.MANDATORY, None, P)
        assert (adj, coop, coop_adj) == (2.0, view.side_follower, -2.0)

    def test_both_violated_counts_as_follower(self):
        ego, view, res = self._res(False, False)
        adj, coop, coop_adj = tactical_cooperation(ego, view, res, LCMode.MANDATORY, None, P)
        assert (adj, coop_adj) == (2.0, -2.0)

    def test_only_ego_violated(self):
        ego, view, res = self._res(True, False)
        assert tactical_cooperation(ego, view, res, LCMode.MANDATORY, None, P) == (-2.0, None, 0.0)

    def test_discretionary_declined(self):
        ego, view, res = self._res(False, True)
        adj, coop, _ = tactical_cooperation(ego, view, res, LCMode.ACTIVATED, FixedRng(0.5), P)
        assert adj == 2.0 and coop is None

    def test_discretionary_accepted(self):
        ego, view, res = self._res(False, True)
        _, coop, _ = tactical_cooperation(ego, view, res, LCMode.ACTIVATED, FixedRng(0.1), P)
        assert coop is view.side_follower

    def test_falls_back_to_follower_of_follower(self):
        ego, view, res = self._res(False, True)
        view.side_follower = veh(ego.pos - ego.length - 1.0)  # inside jam spacing
        _, coop, _ = tactical_cooperation(ego, view, res, LCMode.MANDATORY, None, P)
        assert coop is view.side_follower_follower

    @given(st.floats(-5, 40), st.floats(-5, 60))
    def test_never_cooperates_inside_jam_spacing(self, g1, g2):
        ego, view, res = self._res(False, True)
        view.side_follower = veh(ego.pos - ego.length - g1)
        view.side_follower_follower = veh(ego.pos - ego.length - g1 - g2)
        _, coop, _ = tactical_cooperation(ego, view, res, LCMode.MANDATORY, None, P)
        if coop is not None:
            assert ego.pos - ego.length - coop.pos > IDM.jam_spacing


class TestH:
    def test_missing_follower(self):
        assert h(None, veh(0.0)) == 0.0

    def test_free_road_matches_free_flow(self):
        from relaxsim.cf_models import free_flow
        assert h(veh(0.0, 20.0), None) == pytest.approx(free_flow(20.0, IDM))

    def test_first_order_as_acceleration(self):
        p = CFParams(ModelKind.NEWELL, (2.0, 1.0, 30.0))
        f = LCVehicle(0.0, 10.0, p)
        lead = LCVehicle(100.0, 10.0, p, length=3.0)
        from relaxsim.cf_models import CFInput, evaluate
        assert h(f, lead) == pytest.approx(evaluate(CFInput(97.0, 10.0, 10.0), p) - 10.0)


class TestParams:
    @pytest.mark.parametrize("kw", [dict(d7=1.5), dict(a1=-0.1), dict(d8=2.5), dict(d9=-1),
                                    dict(a2=-1.0), dict(a3=0.5)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            LCParams(**kw)

    def test_packed_order(self):
        assert list(P.packed()) == [-8, -20, 0.6, 0.1, 0, 0.2, 0.1, 20, 20, 0.2, 2, -2]

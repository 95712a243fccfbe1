"""Compiled step loop.

State lives in a struct of arrays indexed by vehicle slot.  Each step:

1. every vehicle's command is computed from the frozen state (relaxed inputs,
   car-following model, tactical/cooperative adjustment)
2. all vehicles move; detector crossings are interpolated inside the step
3. exits are removed and the lane order is rebuilt
4. lane-changing decisions are taken on the frozen post-move order and the
   accepted changes are applied serially, skipping conflicting ones
5. every vehicle whose leader changed gets a relaxation event
6. upstream inflow buffers are filled and vehicles inserted

The kernel returns early whenever a log buffer or the random-number buffer
might overflow during the next step; the Python wrapper drains and refills.
"""

from __future__ import annotations

import math

import numba
import numpy as np

from ..cf_models import (cf_eval, eql_headway_kernel, eql_speed_kernel, free_eval, is_first_order,
                         jam_spacing, max_speed)
from ..dynamics import MIN_HEADWAY, advance_kernel
from ..lane_changing import (ACTIVATE_LEFT, ACTIVATE_RIGHT, ACTIVATED, CHANGE_LEFT, CHANGE_RIGHT,
                             IDLE, MANDATORY, discretionary_gate, discretionary_outcome,
                             mobil_lhs_kernel, safety_threshold_kernel, tactical_kernel)
from ..relaxation import apply_relaxation_kernel, merge_gammas_kernel

NO_LEADER = -1
WALL = -2

# float state columns
POS, SPD, ACC, LEN, FIXED, ENTRY, TACT, COOP = range(8)
NF = 8
# int state columns
ACTIVE, VID, LANE, MODE, STEPS, COOL, PARTNER, LEADER, FOLLOWER, PREV, COLLIDED, TARGET, SLEAD, SFOL = range(14)
NI = 14
# relaxation event fields
R_TLC, R_CS, R_CV, R_GS, R_GV = range(5)

# globals
(G_DT, G_CS, G_CV, G_POSONLY, G_SAFEGUARD, G_ALPHA, G_BETA, G_EPS, G_LENGTH, G_RAMP_START,
 G_MERGE_START, G_MERGE_END, G_B1, G_B2, G_NLANES, G_HAS_RAMP, G_VLEN, G_LC, G_RECORD,
 G_RELAX) = range(20)
NG = 20

# LC parameter vector (LCParams.packed order)
L_D1, L_D2, L_D3, L_D4, L_D5, L_D6, L_D7, L_D8, L_D9, L_A1, L_A2, L_A3 = range(12)

# counters
(C_STEP, C_NTRAJ, C_NDET, C_NEV, C_RNG, C_NEXTVID, C_NACTIVE, C_SPAWNED, C_EXITED, C_COLLISIONS,
 C_NFREE, C_CHANGES) = range(12)
NC = 12

# event kinds in the event log
EV_SPAWN, EV_EXIT, EV_LANE_CHANGE, EV_COLLISION, EV_RELAX, EV_NO_SLOT = range(6)


@numba.njit(cache=True)
def rebuild_order(ist, fst, n_lanes_total, ramp_lane, order, lane_begin, key, idx):
    """Sort active slots by (lane, -position) and relink leaders/followers."""
    m = 0
    for i in range(ist.shape[0]):
        if ist[i, ACTIVE]:
            idx[m] = i
            key[m] = ist[i, LANE] * 1.0e7 - fst[i, POS]
            m += 1
    srt = np.argsort(key[:m], kind="mergesort")
    for j in range(m):
        order[j] = idx[srt[j]]
    for k in range(n_lanes_total + 1):
        lane_begin[k] = m
    for j in range(m - 1, -1, -1):
        lane_begin[ist[order[j], LANE]] = j
    for k in range(n_lanes_total - 1, -1, -1):
        if lane_begin[k] > lane_begin[k + 1]:
            lane_begin[k] = lane_begin[k + 1]
    for k in range(n_lanes_total):
        b0 = lane_begin[k]
        b1 = lane_begin[k + 1]
        for j in range(b0, b1):
            i = order[j]
            if j > b0:
                ist[i, LEADER] = order[j - 1]
            elif k == ramp_lane:
                ist[i, LEADER] = WALL
            else:
                ist[i, LEADER] = NO_LEADER
            ist[i, FOLLOWER] = order[j + 1] if j + 1 < b1 else NO_LEADER
    return m


@numba.njit(cache=True)
def gap_to(i, l, fst, g):
    if l >= 0:
        return fst[l, POS] - fst[l, LEN] - fst[i, POS]
    if l == WALL:
        return g[G_MERGE_END] - fst[i, POS]
    return np.inf


@numba.njit(cache=True)
def prune_events(i, t, rel, ev_n):
    n = ev_n[i]
    w = 0
    for k in range(n):
        if rel[R_TLC, i, k] + max(rel[R_CS, i, k], rel[R_CV, i, k]) > t:
            if w != k:
                for f in range(5):
                    rel[f, i, w] = rel[f, i, k]
            w += 1
    ev_n[i] = w


@numba.njit(cache=True)
def add_event(i, t, gs, gv, cs, cv, rel, ev_n):
    prune_events(i, t, rel, ev_n)
    n = ev_n[i]
    cap = rel.shape[2]
    if n == cap:
        # drop the oldest
        for k in range(1, cap):
            for f in range(5):
                rel[f, i, k - 1] = rel[f, i, k]
        n -= 1
    rel[R_TLC, i, n] = t
    rel[R_CS, i, n] = cs
    rel[R_CV, i, n] = cv
    rel[R_GS, i, n] = gs
    rel[R_GV, i, n] = gv
    ev_n[i] = n + 1


@numba.njit(cache=True)
def cf_command(i, l, t, kind, p, sj, fst, rel, ev_n, g):
    """Model output for ``i`` behind ``l`` (acceleration or target speed)."""
    v = fst[i, SPD]
    if l == NO_LEADER:
        return free_eval(kind, p, v)
    if l == WALL:
        s = g[G_MERGE_END] - fst[i, POS]
        vl = 0.0
    else:
        s = fst[l, POS] - fst[l, LEN] - fst[i, POS]
        vl = fst[l, SPD]
        if ev_n[i] > 0:
            s, vl = apply_relaxation_kernel(s, v, vl, t, rel[R_TLC, i], rel[R_CS, i], rel[R_CV, i],
                                            rel[R_GS, i], rel[R_GV, i], ev_n[i], g[G_POSONLY] > 0,
                                            g[G_SAFEGUARD] > 0, sj, g[G_ALPHA], g[G_BETA], g[G_EPS])
    if s < MIN_HEADWAY:
        s = MIN_HEADWAY
    return cf_eval(kind, p, s, v, vl)


@numba.njit(cache=True)
def h_eval(i, l, t, kind, p, sj, fst, rel, ev_n, g):
    """Response of ``i`` to a hypothetical leader ``l``; -inf when overlapping."""
    if i < 0:
        return 0.0
    if not math.isnan(fst[i, FIXED]):
        return 0.0
    if l != NO_LEADER and gap_to(i, l, fst, g) <= 0.0:
        return -np.inf
    out = cf_command(i, l, t, kind, p, sj, fst, rel, ev_n, g)
    if is_first_order(kind):
        return out - fst[i, SPD]
    return out


@numba.njit(cache=True)
def side_neighbors(lane, x, order, lane_begin, fst):
    """Leader and follower in ``lane`` around position ``x`` (alongside counts as follower)."""
    lo = lane_begin[lane]
    hi = lane_begin[lane + 1]
    b0 = lo
    # first index with position <= x; positions decrease along the segment
    while lo < hi:
        mid = (lo + hi) // 2
        if fst[order[mid], POS] <= x:
            hi = mid
        else:
            lo = mid + 1
    sf = order[lo] if lo < lane_begin[lane + 1] else NO_LEADER
    sl = order[lo - 1] if lo > b0 else NO_LEADER
    return sl, sf


@numba.njit(cache=True)
def _draw(rng_buf, cnt):
    u = rng_buf[cnt[C_RNG]]
    cnt[C_RNG] += 1
    return u


@numba.njit(cache=True)
def _coop_eligible(c, i, fst, sj):
    return c >= 0 and fst[i, POS] - fst[i, LEN] - fst[c, POS] > sj


@numba.njit(cache=True)
def _tactical(i, sf, mandatory, fol_safe, ego_safe, ist, fst, lcp, sj, rng_buf, cnt):
    ego_adj, coop_adj, wants = tactical_kernel(fol_safe, ego_safe, lcp[L_A2], lcp[L_A3])
    fst[i, TACT] = ego_adj
    partner = NO_LEADER
    if wants:
        sff = ist[sf, FOLLOWER] if sf >= 0 else NO_LEADER
        cur = ist[i, PARTNER]
        if cur >= 0 and (cur == sf or cur == sff) and _coop_eligible(cur, i, fst, sj):
            partner = cur
        else:
            for c in (sf, sff):
                if _coop_eligible(c, i, fst, sj):
                    if mandatory or _draw(rng_buf, cnt) < lcp[L_A1]:
                        partner = c
                    break
    ist[i, PARTNER] = partner
    if partner >= 0:
        fst[partner, COOP] = coop_adj


@numba.njit(cache=True)
def _safety(i, sl, sf, t, kind, p, sj, fst, rel, ev_n, g, lcp, vmax):
    thr = safety_threshold_kernel(fst[i, SPD], vmax, lcp[L_D1], lcp[L_D2])
    fol_ok = True
    ego_ok = True
    if sf >= 0:
        fol_ok = h_eval(sf, i, t, kind, p, sj, fst, rel, ev_n, g) > thr
    if sl >= 0:
        ego_ok = h_eval(i, sl, t, kind, p, sj, fst, rel, ev_n, g) > thr
    return fol_ok, ego_ok


@numba.njit(cache=True)
def _incentive(i, sl, sf, bias, t, kind, p, sj, ist, fst, rel, ev_n, g, lcp):
    l = ist[i, LEADER]
    f = ist[i, FOLLOWER]
    ego_new = h_eval(i, sl, t, kind, p, sj, fst, rel, ev_n, g)
    ego_cur = h_eval(i, l, t, kind, p, sj, fst, rel, ev_n, g)
    fol_new = h_eval(f, l, t, kind, p, sj, fst, rel, ev_n, g)
    fol_cur = h_eval(f, i, t, kind, p, sj, fst, rel, ev_n, g)
    sfol_new = h_eval(sf, i, t, kind, p, sj, fst, rel, ev_n, g)
    sfol_cur = h_eval(sf, sl, t, kind, p, sj, fst, rel, ev_n, g)
    lhs = mobil_lhs_kernel(ego_new, ego_cur, fol_new, fol_cur, sfol_new, sfol_cur, lcp[L_D4], bias)
    return lhs > lcp[L_D3]


@numba.njit(cache=True)
def _log_event(evlog, cnt, t, kind, vid, a, b):
    n = cnt[C_NEV]
    evlog[n, 0] = t
    evlog[n, 1] = kind
    evlog[n, 2] = vid
    evlog[n, 3] = a
    evlog[n, 4] = b
    cnt[C_NEV] = n + 1


@numba.njit(cache=True)
def _lc_phase(t, kind, p, sj, vmax, ist, fst, rel, ev_n, g, lcp, order, lane_begin, m,
              rng_buf, cnt):
    """Decide changes on the frozen order; store targets. Returns number of candidates."""
    n_lanes = int(g[G_NLANES])
    has_ramp = g[G_HAS_RAMP] > 0
    ramp = n_lanes
    for j in range(m):
        i = order[j]
        fst[i, TACT] = 0.0
        fst[i, COOP] = 0.0
        ist[i, TARGET] = -1
    n_cand = 0
    for j in range(m):
        i = order[j]
        if not math.isnan(fst[i, FIXED]):
            continue
        lane = ist[i, LANE]
        x = fst[i, POS]
        if has_ramp and lane == ramp:
            if g[G_MERGE_START] <= x <= g[G_MERGE_END]:
                ist[i, MODE] = MANDATORY
                sl, sf = side_neighbors(ramp - 1, x, order, lane_begin, fst)
                fol_ok, ego_ok = _safety(i, sl, sf, t, kind, p, sj, fst, rel, ev_n, g, lcp, vmax)
                if fol_ok and ego_ok:
                    ist[i, TARGET] = ramp - 1
                    ist[i, SLEAD] = sl
                    ist[i, SFOL] = sf
                    n_cand += 1
                else:
                    _tactical(i, sf, True, fol_ok, ego_ok, ist, fst, lcp, sj, rng_buf, cnt)
            else:
                ist[i, MODE] = IDLE
                ist[i, PARTNER] = NO_LEADER
            continue
        if ist[i, COOL] > 0:
            ist[i, COOL] -= 1
            continue
        mode = ist[i, MODE]
        u = _draw(rng_buf, cnt) if mode != ACTIVATED else 0.0
        if not discretionary_gate(mode, ist[i, COOL], u, lcp[L_D7]):
            continue
        has_left = lane > 0
        has_right = lane + 1 < n_lanes
        sl_l = sf_l = sl_r = sf_r = NO_LEADER
        inc_l = safe_l = inc_r = safe_r = False
        fol_l = ego_l = fol_r = ego_r = True
        if has_left:
            sl_l, sf_l = side_neighbors(lane - 1, x, order, lane_begin, fst)
            inc_l = _incentive(i, sl_l, sf_l, lcp[L_D5], t, kind, p, sj, ist, fst, rel, ev_n, g, lcp)
            fol_l, ego_l = _safety(i, sl_l, sf_l, t, kind, p, sj, fst, rel, ev_n, g, lcp, vmax)
            safe_l = fol_l and ego_l
        if has_right:
            sl_r, sf_r = side_neighbors(lane + 1, x, order, lane_begin, fst)
            inc_r = _incentive(i, sl_r, sf_r, lcp[L_D6], t, kind, p, sj, ist, fst, rel, ev_n, g, lcp)
            fol_r, ego_r = _safety(i, sl_r, sf_r, t, kind, p, sj, fst, rel, ev_n, g, lcp, vmax)
            safe_r = fol_r and ego_r
        dec = discretionary_outcome(has_left, inc_l, safe_l, has_right, inc_r, safe_r)
        if dec == CHANGE_LEFT or dec == CHANGE_RIGHT:
            left = dec == CHANGE_LEFT
            ist[i, TARGET] = lane - 1 if left else lane + 1
            ist[i, SLEAD] = sl_l if left else sl_r
            ist[i, SFOL] = sf_l if left else sf_r
            n_cand += 1
            continue
        was_activated = mode == ACTIVATED
        if dec == ACTIVATE_LEFT or dec == ACTIVATE_RIGHT:
            left = dec == ACTIVATE_LEFT
            if not was_activated:
                ist[i, MODE] = ACTIVATED
                ist[i, STEPS] = int(lcp[L_D8])
            _tactical(i, sf_l if left else sf_r, False, fol_l if left else fol_r,
                      ego_l if left else ego_r, ist, fst, lcp, sj, rng_buf, cnt)
        else:
            ist[i, PARTNER] = NO_LEADER
        if was_activated:
            ist[i, STEPS] -= 1
            if ist[i, STEPS] <= 0:
                ist[i, MODE] = IDLE
                ist[i, PARTNER] = NO_LEADER
                fst[i, TACT] = 0.0
    return n_cand


@numba.njit(cache=True)
def _apply_changes(t, ist, fst, lcp, order, m, touched, evlog, cnt):
    applied = 0
    for j in range(m):
        touched[order[j]] = False
    for j in range(m):
        i = order[j]
        tgt = ist[i, TARGET]
        if tgt < 0:
            continue
        inv0 = i
        inv1 = ist[i, LEADER]
        inv2 = ist[i, FOLLOWER]
        inv3 = ist[i, SLEAD]
        inv4 = ist[i, SFOL]
        clash = False
        for v in (inv0, inv1, inv2, inv3, inv4):
            if v >= 0 and touched[v]:
                clash = True
        if clash:
            continue
        for v in (inv0, inv1, inv2, inv3, inv4):
            if v >= 0:
                touched[v] = True
        _log_event(evlog, cnt, t, EV_LANE_CHANGE, ist[i, VID], ist[i, LANE], tgt)
        ist[i, LANE] = tgt
        ist[i, MODE] = IDLE
        ist[i, STEPS] = 0
        ist[i, COOL] = int(lcp[L_D9])
        ist[i, PARTNER] = NO_LEADER
        fst[i, TACT] = 0.0
        applied += 1
    cnt[C_CHANGES] += applied
    return applied


@numba.njit(cache=True)
def _register_relaxation(t, kind, p, ist, fst, rel, ev_n, g, order, m, evlog, cnt):
    cs = g[G_CS]
    cv = g[G_CV]
    for j in range(m):
        i = order[j]
        new = ist[i, LEADER]
        old = ist[i, PREV]
        if new == old or new < 0:
            continue
        if old >= 0:
            gs = gap_to(i, old, fst, g) - gap_to(i, new, fst, g)
            gv = fst[old, SPD] - fst[new, SPD]
        else:
            gs, gv = merge_gammas_kernel(kind, p, fst[i, SPD], gap_to(i, new, fst, g), fst[new, SPD])
        add_event(i, t, gs, gv, cs, cv, rel, ev_n)
        _log_event(evlog, cnt, t, EV_RELAX, ist[i, VID], gs, gv)


@numba.njit(cache=True)
def _spawn(lane, t1, kind, p, vmax, ist, fst, rel, ev_n, g, order, lane_begin, free, cnt, evlog):
    """Try to insert at the start of ``lane``; returns True on success."""
    start = g[G_RAMP_START] if (g[G_HAS_RAMP] > 0 and lane == int(g[G_NLANES])) else 0.0
    b0 = lane_begin[lane]
    b1 = lane_begin[lane + 1]
    if b1 > b0:
        tail = order[b1 - 1]
        s = fst[tail, POS] - fst[tail, LEN] - start
        vl = fst[tail, SPD]
        has_leader = True
    elif g[G_HAS_RAMP] > 0 and lane == int(g[G_NLANES]):
        s = g[G_MERGE_END] - start
        vl = 0.0
        has_leader = True
    else:
        s = np.inf
        vl = vmax
        has_leader = False
    if has_leader:
        if s <= 0.0:
            return False
        v0 = max(vl, eql_speed_kernel(kind, p, s))
        if v0 > vmax:
            v0 = vmax
        s_eq = eql_headway_kernel(kind, p, v0)
        if math.isnan(s_eq):
            s_eq = eql_headway_kernel(kind, p, 0.99 * vmax)
        b_star = g[G_B1] if v0 > g[G_B2] else 1.0
        if s < b_star * s_eq:
            return False
    else:
        v0 = vmax
    if cnt[C_NFREE] == 0:
        _log_event(evlog, cnt, t1, EV_NO_SLOT, -1, lane, 0.0)
        return True
    cnt[C_NFREE] -= 1
    i = free[cnt[C_NFREE]]
    ist[i, :] = 0
    ist[i, ACTIVE] = 1
    ist[i, VID] = cnt[C_NEXTVID]
    cnt[C_NEXTVID] += 1
    ist[i, LANE] = lane
    ist[i, PARTNER] = NO_LEADER
    ist[i, LEADER] = NO_LEADER
    ist[i, FOLLOWER] = NO_LEADER
    ist[i, PREV] = NO_LEADER
    ist[i, TARGET] = -1
    fst[i, :] = 0.0
    fst[i, POS] = start
    fst[i, SPD] = v0
    fst[i, LEN] = g[G_VLEN]
    fst[i, FIXED] = np.nan
    fst[i, ENTRY] = t1
    ev_n[i] = 0
    cnt[C_NACTIVE] += 1
    cnt[C_SPAWNED] += 1
    _log_event(evlog, cnt, t1, EV_SPAWN, ist[i, VID], lane, v0)
    return True


@numba.njit(cache=True)
def run_kernel(n_steps, kind, p, g, lcp, det_x, sched_t, sched_q, buffers,
               ist, fst, rel, ev_n, order, lane_begin, free, key, idx, touched,
               dx_buf, vn_buf, a_buf, vnow_buf,
               traj, detlog, evlog, rng_buf, cnt, stop_flag):
    """Advance up to ``n_steps``; returns the number of steps done."""
    dt = g[G_DT]
    n_lanes = int(g[G_NLANES])
    has_ramp = g[G_HAS_RAMP] > 0
    n_total = n_lanes + (1 if has_ramp else 0)
    ramp_lane = n_lanes if has_ramp else -1
    first = is_first_order(kind)
    sj = jam_spacing(kind, p)
    vmax = max_speed(kind, p)
    rec = int(g[G_RECORD])
    n_det = det_x.shape[0]
    road_len = g[G_LENGTH]
    lc_on = g[G_LC] > 0
    relax_on = g[G_RELAX] > 0
    m = rebuild_order(ist, fst, n_total, ramp_lane, order, lane_begin, key, idx)
    done = 0
    while done < n_steps:
        # room for one more step in every buffer
        if rec > 0 and cnt[C_NTRAJ] + m > traj.shape[0]:
            break
        if cnt[C_NDET] + m * max(n_det, 1) > detlog.shape[0]:
            break
        if cnt[C_NEV] + 6 * m + 2 * n_total + 8 > evlog.shape[0]:
            break
        if cnt[C_RNG] + 2 * m + 2 > rng_buf.shape[0]:
            break
        step = cnt[C_STEP]
        t = step * dt
        t1 = (step + 1) * dt
        record = rec > 0 and step % rec == 0
        # 1. commands from the frozen state
        for j in range(m):
            i = order[j]
            if ev_n[i] > 0:
                prune_events(i, t, rel, ev_n)
            if not math.isnan(fst[i, FIXED]):
                dx, vn, a, vnow = advance_kernel(True, fst[i, FIXED], fst[i, SPD], dt)
            else:
                out = cf_command(i, ist[i, LEADER], t, kind, p, sj, fst, rel, ev_n, g)
                adj = fst[i, TACT] + fst[i, COOP]
                if first:
                    out += adj * dt
                else:
                    out += adj
                dx, vn, a, vnow = advance_kernel(first, out, fst[i, SPD], dt)
            dx_buf[i] = dx
            vn_buf[i] = vn
            a_buf[i] = a
            vnow_buf[i] = vnow
        # 2. move, log
        for j in range(m):
            i = order[j]
            x0 = fst[i, POS]
            x1 = x0 + dx_buf[i]
            if record:
                r = cnt[C_NTRAJ]
                traj[r, 0] = t
                traj[r, 1] = ist[i, VID]
                traj[r, 2] = ist[i, LANE]
                traj[r, 3] = x0
                traj[r, 4] = vnow_buf[i]
                traj[r, 5] = a_buf[i]
                cnt[C_NTRAJ] = r + 1
            if ist[i, LANE] < n_lanes and x1 > x0:
                for d in range(n_det):
                    xd = det_x[d]
                    if x0 < xd <= x1:
                        f = (xd - x0) / (x1 - x0)
                        r = cnt[C_NDET]
                        detlog[r, 0] = d
                        detlog[r, 1] = t + f * dt
                        detlog[r, 2] = ist[i, VID]
                        detlog[r, 3] = vnow_buf[i] + f * (vn_buf[i] - vnow_buf[i])
                        detlog[r, 4] = ist[i, LANE]
                        cnt[C_NDET] = r + 1
            fst[i, POS] = x1
            fst[i, SPD] = vn_buf[i]
            fst[i, ACC] = a_buf[i]
        # 3. exits
        n_exit = 0
        for j in range(m):
            i = order[j]
            if ist[i, LANE] < n_lanes and fst[i, POS] > road_len:
                _log_event(evlog, cnt, t1, EV_EXIT, ist[i, VID], ist[i, LANE], fst[i, SPD])
                ist[i, ACTIVE] = 0
                free[cnt[C_NFREE]] = i
                cnt[C_NFREE] += 1
                cnt[C_NACTIVE] -= 1
                cnt[C_EXITED] += 1
                n_exit += 1
        m = rebuild_order(ist, fst, n_total, ramp_lane, order, lane_begin, key, idx)
        for j in range(m):
            i = order[j]
            l = ist[i, LEADER]
            if l == NO_LEADER:
                ist[i, COLLIDED] = 0
            else:
                gap = gap_to(i, l, fst, g)
                if gap < 0.0:
                    if not ist[i, COLLIDED]:
                        other = ist[l, VID] if l >= 0 else WALL
                        _log_event(evlog, cnt, t1, EV_COLLISION, ist[i, VID], other, gap)
                        cnt[C_COLLISIONS] += 1
                    ist[i, COLLIDED] = 1
                else:
                    ist[i, COLLIDED] = 0
            ist[i, PREV] = l
        # 4. lane changes
        changed = False
        if lc_on:
            n_cand = _lc_phase(t1, kind, p, sj, vmax, ist, fst, rel, ev_n, g, lcp, order,
                               lane_begin, m, rng_buf, cnt)
            if n_cand > 0:
                if _apply_changes(t1, ist, fst, lcp, order, m, touched, evlog, cnt) > 0:
                    m = rebuild_order(ist, fst, n_total, ramp_lane, order, lane_begin, key, idx)
                    changed = True
        # 5. relaxation; t_lc is the last step that used the old leader
        if changed and relax_on:
            _register_relaxation(t, kind, p, ist, fst, rel, ev_n, g, order, m, evlog, cnt)
        # 6. inflows
        spawned = False
        for lane in range(n_total):
            q = np.interp(t1, sched_t[lane], sched_q[lane])
            buffers[lane] += q * dt
            if buffers[lane] >= 1.0:
                if _spawn(lane, t1, kind, p, vmax, ist, fst, rel, ev_n, g, order, lane_begin,
                          free, cnt, evlog):
                    buffers[lane] -= 1.0
                    spawned = True
                    m = rebuild_order(ist, fst, n_total, ramp_lane, order, lane_begin, key, idx)
        cnt[C_STEP] = step + 1
        done += 1
        if stop_flag[0]:
            break
    return done

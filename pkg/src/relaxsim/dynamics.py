"""Time stepping shared by the engine and the single-follower replay loop.

Conventions used throughout the package:

* positions are front bumpers; headway = leader position - leader length - position
* state at step ``n`` is logged together with the acceleration chosen at ``n``
* second order models move ballistically and stop (rather than reverse) when a
  deceleration would take the speed below zero within the step
* first order models drive at their target speed over ``[t, t + dt]``; the
  logged acceleration is the change in that speed divided by ``dt``
"""

from __future__ import annotations

import math

import numba
import numpy as np

from .cf_models import IDM, cf_eval, free_eval, is_first_order, jam_spacing, ska_kernel
from .relaxation import apply_relaxation_kernel, merge_gammas_kernel

MIN_HEADWAY = 1e-3


@numba.njit(cache=True)
def advance_kernel(first_order, out, v, dt):
    """Return ``(dx, new_speed, accel, speed_now)`` for one step.

    ``out`` is the model output: an acceleration, or a target speed for first
    order models.  ``speed_now`` is the speed the vehicle has at the start of
    the step (differs from ``v`` only for first order models).
    """
    if first_order:
        vt = out if out > 0.0 else 0.0
        return vt * dt, vt, (vt - v) / dt, vt
    vn = v + out * dt
    if vn < 0.0:
        # stop inside the step
        dx = -v * v / (2.0 * out) if out < 0.0 else 0.0
        return dx, 0.0, -v / dt, v
    return v * dt + 0.5 * out * dt * dt, vn, out, v


@numba.njit(cache=True)
def follow_kernel(kind, p, x0, v0, dt, n_steps, t0,
                  lead_rear, lead_speed,
                  ev_tlc, ev_gs, ev_gv, ev_merge, ev_frame, ev_new_rear, ev_new_speed,
                  c_s, c_v, positive_only, use_safeguard, alpha, beta, eps,
                  ska, ska_t0, ska_tau,
                  x_out, v_out, a_out):
    """Simulate one follower behind a scripted leader.

    ``lead_rear[n]`` is the leader's rear bumper at frame ``n`` (NaN when the
    follower has no leader, in which case the free boundary applies).  Event
    ``k`` has ``ev_frame[k]`` as the last frame with the old leader and takes
    effect from the next frame; merge events get their amounts from the
    simulated state at that next frame, where ``ev_new_rear``/``ev_new_speed``
    describe the new leader.  Events must be sorted by frame.  Returns the
    number of frames at which the follower overlapped its leader and was
    clamped.
    """
    first = is_first_order(kind)
    pp = p.copy()
    sj = jam_spacing(kind, p)
    n_ev = ev_tlc.shape[0]
    act_tlc = np.empty(n_ev)
    act_cs = np.empty(n_ev)
    act_cv = np.empty(n_ev)
    act_gs = np.empty(n_ev)
    act_gv = np.empty(n_ev)
    n_act = 0
    next_ev = 0
    t_star = p[1]
    collisions = 0
    x = x0
    v = v0
    # events created before the first frame
    while next_ev < n_ev and ev_frame[next_ev] < 0:
        if ska:
            t_star = min(p[1], ska_t0)
        else:
            act_tlc[n_act] = ev_tlc[next_ev]
            act_cs[n_act] = c_s
            act_cv[n_act] = c_v
            act_gs[n_act] = ev_gs[next_ev]
            act_gv[n_act] = ev_gv[next_ev]
            n_act += 1
        next_ev += 1
    for n in range(n_steps):
        t = t0 + n * dt
        rear = lead_rear[n]
        if math.isnan(rear):
            out = free_eval(kind, p, v)
        else:
            s = rear - x
            vl = lead_speed[n]
            if ska:
                pp[1] = t_star
                s_in = s
                vl_in = vl
            else:
                s_in, vl_in = apply_relaxation_kernel(
                    s, v, vl, t, act_tlc, act_cs, act_cv, act_gs, act_gv, n_act,
                    positive_only, use_safeguard, sj, alpha, beta, eps)
            if s_in < MIN_HEADWAY:
                s_in = MIN_HEADWAY
            out = cf_eval(kind, pp, s_in, v, vl_in)
        dx, vn, a, vnow = advance_kernel(first, out, v, dt)
        x_out[n] = x
        v_out[n] = vnow
        a_out[n] = a
        x = x + dx
        v = vn
        # clamp at the leader's rear at the next frame
        if n + 1 < n_steps:
            nr = lead_rear[n + 1]
            if not math.isnan(nr) and x > nr:
                x = nr
                collisions += 1
        if ska and kind == IDM:
            t_star = ska_kernel(t_star, p[1], ska_tau, dt)
        # leader changes whose last frame with the old leader is n; amounts are
        # taken at frame n + 1, the first frame with the new leader
        while next_ev < n_ev and ev_frame[next_ev] == n:
            if ska:
                t_star = min(p[1], ska_t0)
            else:
                gs = ev_gs[next_ev]
                gv = ev_gv[next_ev]
                if ev_merge[next_ev]:
                    gs, gv = merge_gammas_kernel(kind, p, v, ev_new_rear[next_ev] - x,
                                                 ev_new_speed[next_ev])
                act_tlc[n_act] = ev_tlc[next_ev]
                act_cs[n_act] = c_s
                act_cv[n_act] = c_v
                act_gs[n_act] = gs
                act_gv[n_act] = gv
                n_act += 1
            next_ev += 1
    return collisions


def empty_events():
    z = np.zeros(0)
    return z, z, z, np.zeros(0, dtype=np.bool_), np.zeros(0, dtype=np.int64), z, z

"""Relaxation of car-following inputs after leader changes.

A leader change records the jump in headway and leader speed it caused
(``gamma_s``, ``gamma_v``).  While the event is active, a linearly decaying
fraction of that jump is added back onto the inputs handed to the
car-following model, so the model sees a continuous headway instead of the
sudden one.  Events stack: each leader change carries its own amounts and its
own decay clock.

The array kernels at the bottom of the module are what the engine and the
calibration replay call; the dataclass API wraps the same kernels.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numba
import numpy as np

from .cf_models import CFInput, CFParams, eql_headway_kernel, max_speed

BOTH_SIGNS = 0
POSITIVE_ONLY = 1
TWO_PARAMETER = 2


class RelaxMode(enum.IntEnum):
    BOTH_SIGNS = BOTH_SIGNS
    POSITIVE_ONLY = POSITIVE_ONLY
    TWO_PARAMETER = TWO_PARAMETER

    @classmethod
    def parse(cls, name) -> "RelaxMode":
        if isinstance(name, RelaxMode):
            return name
        key = str(name).strip().lower().replace("-", "_")
        aliases = {"both": "both_signs", "positive": "positive_only", "2p": "two_parameter",
                   "two_param": "two_parameter"}
        key = aliases.get(key, key)
        try:
            return cls[key.upper()]
        except KeyError:
            raise ValueError(f"unknown relaxation mode {name!r}") from None


class RelaxationError(RuntimeError):
    pass


@dataclass(frozen=True)
class RelaxationConfig:
    """Relaxation settings.

    ``c`` is the relaxation time.  In two-parameter mode ``c_s`` and ``c_v``
    give separate durations for the headway and the speed amounts.  ``c <= 0``
    disables relaxation entirely.
    """

    c: float = 0.0
    mode: RelaxMode = RelaxMode.BOTH_SIGNS
    c_s: Optional[float] = None
    c_v: Optional[float] = None
    safeguard: bool = True
    safeguard_alpha: float = 0.6
    safeguard_beta: float = 1.5
    safeguard_eps: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "mode", RelaxMode.parse(self.mode))
        if self.safeguard_alpha < 0 or self.safeguard_beta <= 0 or self.safeguard_eps <= 0:
            raise ValueError("safeguard needs alpha >= 0, beta > 0, eps > 0")
        if self.mode == RelaxMode.TWO_PARAMETER:
            if self.c_s is None or self.c_v is None:
                raise ValueError("two_parameter mode needs c_s and c_v")
            if self.c_s < 0 or self.c_v < 0:
                raise ValueError("relaxation times must be nonnegative")
        elif self.c < 0:
            raise ValueError("relaxation time must be nonnegative")

    @property
    def durations(self) -> tuple[float, float]:
        if self.mode == RelaxMode.TWO_PARAMETER:
            return float(self.c_s), float(self.c_v)
        return float(self.c), float(self.c)

    @property
    def enabled(self) -> bool:
        return max(self.durations) > 0

    @property
    def positive_only(self) -> bool:
        return self.mode == RelaxMode.POSITIVE_ONLY


@dataclass(frozen=True)
class RelaxationEvent:
    t_lc: float
    c_s: float
    c_v: float
    gamma_s: float
    gamma_v: float

    @property
    def end(self) -> float:
        return self.t_lc + max(self.c_s, self.c_v)


@dataclass
class RelaxationState:
    events: list[RelaxationEvent] = field(default_factory=list)

    def prune(self, t: float) -> None:
        """Drop events that contribute nothing at ``t`` or later."""
        self.events = [ev for ev in self.events if ev.end > t]

    def as_arrays(self):
        n = len(self.events)
        out = np.empty((5, max(n, 1)))
        for i, ev in enumerate(self.events):
            out[:, i] = (ev.t_lc, ev.c_s, ev.c_v, ev.gamma_s, ev.gamma_v)
        return out[0], out[1], out[2], out[3], out[4], n


@dataclass(frozen=True)
class VehicleSnapshot:
    """Position (front bumper), speed and length of one vehicle at one instant."""

    pos: float
    speed: float
    length: float = 0.0


# --------------------------------------------------------------------------
# kernels
# --------------------------------------------------------------------------

@numba.njit(cache=True)
def relax_factor_kernel(t, t_lc, c):
    if c > 0.0 and t_lc < t < t_lc + c:
        return 1.0 - (t - t_lc) / c
    return 0.0


@numba.njit(cache=True)
def safeguard_scale(s, v, vl, s_jam, alpha, beta, eps):
    """Multiplier applied to every event's factor; 1 when not approaching."""
    if v <= vl:
        return 1.0
    z = max(s - s_jam - alpha * v, eps) / (v - vl)
    if 0.0 < z < beta:
        return z / beta
    return 1.0


@numba.njit(cache=True)
def apply_relaxation_kernel(s, v, vl, t, ev_tlc, ev_cs, ev_cv, ev_gs, ev_gv, n,
                            positive_only, use_safeguard, s_jam, alpha, beta, eps):
    """Relaxed (headway, leader speed) from raw inputs and ``n`` stacked events."""
    if n == 0:
        return s, vl
    scale = 1.0
    if use_safeguard:
        scale = safeguard_scale(s, v, vl, s_jam, alpha, beta, eps)
    ds = 0.0
    dv = 0.0
    for k in range(n):
        gs = ev_gs[k]
        gv = ev_gv[k]
        if not (positive_only and gs <= 0.0):
            ds += scale * relax_factor_kernel(t, ev_tlc[k], ev_cs[k]) * gs
        if not (positive_only and gv <= 0.0):
            dv += scale * relax_factor_kernel(t, ev_tlc[k], ev_cv[k]) * gv
    return s + ds, vl + dv


@numba.njit(cache=True)
def merge_gammas_kernel(kind, p, ego_speed, new_headway, new_leader_speed):
    s_eql = eql_headway_kernel(kind, p, ego_speed)
    if math.isnan(s_eql):
        # no equilibrium at or above max speed
        s_eql = eql_headway_kernel(kind, p, 0.99 * max_speed(kind, p))
    return s_eql - new_headway, ego_speed - new_leader_speed


# --------------------------------------------------------------------------
# public API
# --------------------------------------------------------------------------

def relaxation_factor(t: float, ev: RelaxationEvent, which: str = "headway") -> float:
    """Linear decay from 1 just after ``t_lc`` to 0 at ``t_lc + c``; 0 outside."""
    if which not in ("headway", "speed"):
        raise ValueError(f"which must be 'headway' or 'speed', got {which!r}")
    c = ev.c_s if which == "headway" else ev.c_v
    return float(relax_factor_kernel(t, ev.t_lc, c))


def headway(follower: VehicleSnapshot, leader: VehicleSnapshot) -> float:
    return leader.pos - leader.length - follower.pos


def gammas_on_leader_change(old_leader: VehicleSnapshot, new_leader: VehicleSnapshot,
                            ego: VehicleSnapshot) -> tuple[float, float]:
    gamma_s = headway(ego, old_leader) - headway(ego, new_leader)
    gamma_v = old_leader.speed - new_leader.speed
    return gamma_s, gamma_v


def gammas_on_merge(ego_speed: float, new_leader: VehicleSnapshot, ego_pos: float,
                    p: CFParams) -> tuple[float, float]:
    """Relaxation amounts when there is no previous leader (merging from a ramp)."""
    new_hd = new_leader.pos - new_leader.length - ego_pos
    gs, gv = merge_gammas_kernel(p.code, p.packed, ego_speed, new_hd, new_leader.speed)
    return float(gs), float(gv)


def safeguard_factor(r: float, speed: float, headway: float, leader_speed: float,
                     jam_spacing: float, cfg: RelaxationConfig) -> float:
    scale = safeguard_scale(headway, speed, leader_speed, jam_spacing, cfg.safeguard_alpha,
                            cfg.safeguard_beta, cfg.safeguard_eps)
    return r * float(scale)


def apply_relaxation(inp: CFInput, state: RelaxationState, t: float, cfg: RelaxationConfig,
                     jam_spacing: float = 0.0) -> CFInput:
    """Inputs with every active event's share of its amounts added back."""
    tlc, cs, cv, gs, gv, n = state.as_arrays()
    s, vl = apply_relaxation_kernel(inp.headway, inp.own_speed, inp.leader_speed, t, tlc, cs, cv,
                                    gs, gv, n, cfg.positive_only, cfg.safeguard, jam_spacing,
                                    cfg.safeguard_alpha, cfg.safeguard_beta, cfg.safeguard_eps)
    return replace(inp, headway=float(s), leader_speed=float(vl))


def register_leader_change(state: RelaxationState, ego: VehicleSnapshot, p: CFParams,
                           old_leader: Optional[VehicleSnapshot], new_leader: VehicleSnapshot,
                           t: float, cfg: RelaxationConfig, merge: bool = False) -> RelaxationState:
    """Append the event caused by a leader change at ``t`` (last step with the old leader).

    Without an old leader the amounts come from the equilibrium headway at the
    ego's speed; ``merge`` must then be set, otherwise the call is an engine bug.
    """
    if not cfg.enabled:
        return state
    if old_leader is not None:
        gs, gv = gammas_on_leader_change(old_leader, new_leader, ego)
        if abs(headway(ego, new_leader) + gs - headway(ego, old_leader)) > 1e-9 * max(1.0, abs(gs)):
            raise RelaxationError("relaxed headway discontinuous at leader change")
    elif merge:
        gs, gv = gammas_on_merge(ego.speed, new_leader, ego.pos, p)
    else:
        raise RelaxationError("leader change without an old leader outside a merge")
    c_s, c_v = cfg.durations
    state.prune(t)
    state.events.append(RelaxationEvent(t, c_s, c_v, gs, gv))
    return state

"""Lane-changing decisions: gap acceptance, MOBIL incentive, mandatory merging
and the tactical/cooperation accelerations applied while a change is pending.

The engine evaluates these rules inside compiled code; the kernels here are
the shared arithmetic.  The dataclass API (``LCContext`` and friends) wraps the
same kernels for use outside the engine and in tests.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np

from .cf_models import CFInput, CFParams, evaluate, free_flow
from .relaxation import RelaxationConfig, RelaxationState, apply_relaxation

# decision codes shared with the engine
NONE = 0
CHANGE_LEFT = 1
CHANGE_RIGHT = 2
ACTIVATE_LEFT = 3
ACTIVATE_RIGHT = 4

IDLE = 0
ACTIVATED = 1
MANDATORY = 2


@dataclass(frozen=True)
class LCParams:
    d1: float = -8.0   # safety threshold at max speed
    d2: float = -20.0  # safety threshold at standstill
    d3: float = 0.6    # incentive threshold
    d4: float = 0.1    # politeness
    d5: float = 0.0    # left bias
    d6: float = 0.2    # right bias
    d7: float = 0.1    # per-step check probability
    d8: int = 20       # activated steps
    d9: int = 20       # cooldown steps after a change
    a1: float = 0.2    # discretionary cooperation probability
    a2: float = 2.0    # tactical acceleration
    a3: float = -2.0   # tactical/cooperative deceleration

    def __post_init__(self):
        if not (0 <= self.d7 <= 1 and 0 <= self.a1 <= 1):
            raise ValueError("d7 and a1 are probabilities")
        if int(self.d8) != self.d8 or int(self.d9) != self.d9 or self.d8 < 0 or self.d9 < 0:
            raise ValueError("d8 and d9 are nonnegative step counts")
        if not self.a2 > 0 > self.a3:
            raise ValueError("need a2 > 0 > a3")
        object.__setattr__(self, "d8", int(self.d8))
        object.__setattr__(self, "d9", int(self.d9))

    def packed(self) -> np.ndarray:
        return np.array([self.d1, self.d2, self.d3, self.d4, self.d5, self.d6, self.d7,
                         self.d8, self.d9, self.a1, self.a2, self.a3], dtype=float)


class LCMode(enum.IntEnum):
    IDLE = IDLE
    ACTIVATED = ACTIVATED
    MANDATORY = MANDATORY


@dataclass
class LCState:
    mode: LCMode = LCMode.IDLE
    steps_left: int = 0
    cooldown: int = 0
    cooperating_with: Optional[object] = None
    tactical_adjust: float = 0.0


# --------------------------------------------------------------------------
# kernels
# --------------------------------------------------------------------------

@numba.njit(cache=True)
def safety_threshold_kernel(v, vmax, d1, d2):
    frac = v / vmax if vmax > 0.0 and vmax < np.inf else 1.0
    if frac < 0.0:
        frac = 0.0
    elif frac > 1.0:
        frac = 1.0
    return d1 * frac + d2 * (1.0 - frac)


@numba.njit(cache=True)
def mobil_lhs_kernel(ego_new, ego_cur, fol_new, fol_cur, sfol_new, sfol_cur, politeness, bias):
    """Left side of the incentive inequality from the six model evaluations.

    ``fol_new``/``fol_cur``: current follower behind the ego's current leader
    (after the change) and behind the ego (now).  ``sfol_new``/``sfol_cur``:
    side follower behind the ego (after) and behind the side leader (now).
    """
    return ego_new - ego_cur + politeness * (fol_new - fol_cur + sfol_new - sfol_cur) + bias


@numba.njit(cache=True)
def discretionary_gate(mode, cooldown, u, d7):
    """Whether the discretionary rules are evaluated this step."""
    if cooldown > 0:
        return False
    if mode == ACTIVATED:
        return True
    return u < d7


@numba.njit(cache=True)
def discretionary_outcome(has_left, inc_left, safe_left, has_right, inc_right, safe_right):
    if has_left and inc_left and safe_left:
        return CHANGE_LEFT
    if has_right and inc_right and safe_right:
        return CHANGE_RIGHT
    if has_left and inc_left:
        return ACTIVATE_LEFT
    if has_right and inc_right:
        return ACTIVATE_RIGHT
    return NONE


@numba.njit(cache=True)
def tactical_kernel(fol_safe, ego_safe, a2, a3):
    """Return ``(ego adjustment, coop adjustment, wants cooperation)``."""
    if not fol_safe:
        return a2, a3, True
    if not ego_safe:
        return a3, 0.0, False
    return 0.0, 0.0, False


# --------------------------------------------------------------------------
# object API
# --------------------------------------------------------------------------

@dataclass
class LCVehicle:
    """A vehicle as seen by the lane-changing rules."""

    pos: float
    speed: float
    params: CFParams
    length: float = 3.0
    relax: RelaxationState = field(default_factory=RelaxationState)
    lc: LCState = field(default_factory=LCState)


def h(follower: Optional[LCVehicle], leader: Optional[LCVehicle], t: float = 0.0,
      relax_cfg: RelaxationConfig = RelaxationConfig()) -> float:
    """Car-following response of ``follower`` if ``leader`` were its leader.

    Missing leader gives the free boundary.  Overlapping vehicles give ``-inf``.
    First order models are converted to the acceleration needed to reach their
    target speed within one second.
    """
    if follower is None:
        return 0.0
    p = follower.params
    if leader is None:
        out = free_flow(follower.speed, p)
    else:
        s = leader.pos - leader.length - follower.pos
        if s <= 0:
            return -math.inf
        inp = apply_relaxation(CFInput(s, follower.speed, leader.speed), follower.relax, t,
                               relax_cfg, p.jam_spacing)
        out = evaluate(inp, p)
    if p.first_order:
        out = out - follower.speed
    return out


def safety_threshold(v: float, v_max: float, p: LCParams) -> float:
    return float(safety_threshold_kernel(v, v_max, p.d1, p.d2))


@dataclass
class SafetyResult:
    safe: bool
    follower_safe: bool
    ego_safe: bool
    follower_accel: Optional[float]
    ego_accel: Optional[float]
    threshold: float

    def __bool__(self):
        return self.safe


def check_safety(ego: LCVehicle, side_leader: Optional[LCVehicle],
                 side_follower: Optional[LCVehicle], p: LCParams, t: float = 0.0,
                 relax_cfg: RelaxationConfig = RelaxationConfig()) -> SafetyResult:
    """Both the side follower and the ego must stay above the speed-dependent threshold."""
    thr = safety_threshold(ego.speed, ego.params.max_speed, p)
    fol_a = h(side_follower, ego, t, relax_cfg) if side_follower is not None else None
    ego_a = h(ego, side_leader, t, relax_cfg) if side_leader is not None else None
    fol_ok = fol_a is None or fol_a > thr
    ego_ok = ego_a is None or ego_a > thr
    return SafetyResult(fol_ok and ego_ok, fol_ok, ego_ok, fol_a, ego_a, thr)


def mobil_incentive(ego: LCVehicle, leader: Optional[LCVehicle], follower: Optional[LCVehicle],
                    side_leader: Optional[LCVehicle], side_follower: Optional[LCVehicle],
                    side: str, p: LCParams, t: float = 0.0,
                    relax_cfg: RelaxationConfig = RelaxationConfig()) -> bool:
    if side not in ("left", "right"):
        raise ValueError(f"side must be left or right, got {side!r}")
    bias = p.d5 if side == "left" else p.d6
    lhs = mobil_lhs_kernel(h(ego, side_leader, t, relax_cfg), h(ego, leader, t, relax_cfg),
                           h(follower, leader, t, relax_cfg), h(follower, ego, t, relax_cfg),
                           h(side_follower, ego, t, relax_cfg),
                           h(side_follower, side_leader, t, relax_cfg), p.d4, bias)
    return bool(lhs > p.d3)


@dataclass
class SideView:
    """Neighbors relevant to a change toward one side."""

    side: str
    leader: Optional[LCVehicle]
    follower: Optional[LCVehicle]
    side_leader: Optional[LCVehicle]
    side_follower: Optional[LCVehicle]
    side_follower_follower: Optional[LCVehicle] = None


def _sample(rng) -> float:
    return float(rng.random()) if rng is not None else 1.0


def discretionary_step(ego: LCVehicle, sides: list[SideView], rng, p: LCParams, t: float = 0.0,
                       relax_cfg: RelaxationConfig = RelaxationConfig()) -> tuple[int, Optional[SideView]]:
    """Advance the discretionary state machine by one step.

    Returns a decision code (``NONE``, ``CHANGE_*``, ``ACTIVATE_*``) and the side
    it concerns.  Mutates ``ego.lc`` counters and tactical adjustment.
    """
    st = ego.lc
    st.tactical_adjust = 0.0
    if st.cooldown > 0:
        st.cooldown -= 1
        return NONE, None
    u = _sample(rng) if st.mode == LCMode.IDLE else 0.0
    if not discretionary_gate(int(st.mode), st.cooldown, u, p.d7):
        return NONE, None
    by_side = {v.side: v for v in sides}
    flags = []
    for name in ("left", "right"):
        view = by_side.get(name)
        if view is None:
            flags += [False, False, False]
            continue
        inc = mobil_incentive(ego, view.leader, view.follower, view.side_leader, view.side_follower,
                              name, p, t, relax_cfg)
        safe = check_safety(ego, view.side_leader, view.side_follower, p, t, relax_cfg)
        flags += [True, inc, safe.safe]
    decision = int(discretionary_outcome(*flags))
    if decision in (CHANGE_LEFT, CHANGE_RIGHT):
        st.mode, st.steps_left, st.cooldown = LCMode.IDLE, 0, p.d9
        st.cooperating_with = None
        return decision, by_side["left" if decision == CHANGE_LEFT else "right"]
    was_activated = st.mode == LCMode.ACTIVATED
    result: tuple[int, Optional[SideView]] = (NONE, None)
    if decision in (ACTIVATE_LEFT, ACTIVATE_RIGHT):
        view = by_side["left" if decision == ACTIVATE_LEFT else "right"]
        if not was_activated:
            st.mode, st.steps_left = LCMode.ACTIVATED, p.d8
        safe = check_safety(ego, view.side_leader, view.side_follower, p, t, relax_cfg)
        tactical_cooperation(ego, view, safe, LCMode.ACTIVATED, rng, p)
        result = (decision, view)
    else:
        st.cooperating_with = None
    # the activation window counts down from the step after it opened
    if was_activated:
        st.steps_left -= 1
        if st.steps_left <= 0:
            st.mode = LCMode.IDLE
            st.cooperating_with = None
            st.tactical_adjust = 0.0
    return result


def mandatory_step(ego: LCVehicle, view: SideView, p: LCParams, t: float = 0.0,
                   relax_cfg: RelaxationConfig = RelaxationConfig()) -> tuple[bool, SafetyResult]:
    """Change as soon as it is safe; otherwise engage tactical/cooperation. No randomness."""
    ego.lc.mode = LCMode.MANDATORY
    safe = check_safety(ego, view.side_leader, view.side_follower, p, t, relax_cfg)
    if safe.safe:
        ego.lc.tactical_adjust = 0.0
        ego.lc.cooperating_with = None
        return True, safe
    tactical_cooperation(ego, view, safe, LCMode.MANDATORY, None, p)
    return False, safe


def coop_eligible(coop: Optional[LCVehicle], ego: LCVehicle) -> bool:
    if coop is None:
        return False
    return ego.pos - ego.length - coop.pos > coop.params.jam_spacing


def tactical_cooperation(ego: LCVehicle, view: SideView, safety: SafetyResult, mode: LCMode, rng,
                         p: LCParams) -> tuple[float, Optional[LCVehicle], float]:
    """Set the ego's tactical adjustment and pick a cooperating vehicle.

    Returns ``(ego adjustment, cooperating vehicle or None, its adjustment)``.
    """
    ego_adj, coop_adj, wants = tactical_kernel(safety.follower_safe, safety.ego_safe, p.a2, p.a3)
    ego.lc.tactical_adjust = ego_adj
    coop = None
    if wants:
        current = ego.lc.cooperating_with
        candidates = [view.side_follower, view.side_follower_follower]
        if current is not None and any(current is c for c in candidates) and coop_eligible(current, ego):
            coop = current
        else:
            for cand in candidates:
                if coop_eligible(cand, ego):
                    if mode == LCMode.MANDATORY or _sample(rng) < p.a1:
                        coop = cand
                    break
    ego.lc.cooperating_with = coop
    return ego_adj, coop, coop_adj if coop is not None else 0.0

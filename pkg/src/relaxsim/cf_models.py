"""Car-following models and their equilibrium solutions.

Every model is evaluated through the same ``(headway, own speed, leader speed)``
signature so that relaxation can alter the inputs without knowing which model
sits behind them.  Second order models (IDM, OVM, linear second order) return
an acceleration; first order models (Newell, linear Newell) return the speed
the vehicle should drive at.

The scalar kernels are compiled with numba because the simulation engine and
the calibration replay loop call them millions of times.  The public functions
below wrap the same kernels, so there is exactly one implementation of each
model.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numba
import numpy as np

IDM = 0
OVM = 1
NEWELL = 2
LINEAR_NEWELL = 3
LINEAR_SECOND_ORDER = 4

N_PARAMS = 5
_EQL_TOL = 1e-10
_S_MAX = 1e6


class ModelKind(enum.IntEnum):
    IDM = IDM
    OVM = OVM
    NEWELL = NEWELL
    LINEAR_NEWELL = LINEAR_NEWELL
    LINEAR_SECOND_ORDER = LINEAR_SECOND_ORDER

    @classmethod
    def parse(cls, name: str | int | "ModelKind") -> "ModelKind":
        if isinstance(name, ModelKind):
            return name
        if isinstance(name, (int, np.integer)):
            return cls(int(name))
        key = name.strip().upper().replace("-", "_").replace(" ", "_")
        aliases = {"LINEARNEWELL": "LINEAR_NEWELL", "LSO": "LINEAR_SECOND_ORDER",
                   "LINEARSECONDORDER": "LINEAR_SECOND_ORDER"}
        key = aliases.get(key, key)
        try:
            return cls[key]
        except KeyError:
            raise ValueError(f"unknown car following model {name!r}") from None


PARAM_NAMES = {
    ModelKind.IDM: ("c1", "c2", "c3", "c4", "c5"),
    ModelKind.OVM: ("c1", "c2", "c3", "c4", "c5"),
    ModelKind.NEWELL: ("delta", "tau", "vf"),
    ModelKind.LINEAR_NEWELL: ("beta1", "beta2"),
    ModelKind.LINEAR_SECOND_ORDER: ("beta1", "beta2", "beta3", "beta4"),
}

# appendix IDM parameters [max speed, time headway, jam spacing, accel, decel]
IDM_DEFAULT = (35.0, 1.3, 2.0, 1.1, 1.5)


class CFError(ValueError):
    """Raised for invalid parameters or states that indicate a corrupted simulation."""


class NoEquilibriumError(CFError):
    """Requested speed is at or above the model's maximum speed."""


@dataclass(frozen=True)
class CFParams:
    """Parameter set for one car-following model.

    ``values`` holds the model parameters in the order of ``PARAM_NAMES``.
    """

    kind: ModelKind
    values: tuple[float, ...]
    _packed: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        kind = ModelKind.parse(self.kind)
        object.__setattr__(self, "kind", kind)
        values = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", values)
        names = PARAM_NAMES[kind]
        if len(values) != len(names):
            raise CFError(f"{kind.name} takes {len(names)} parameters {names}, got {len(values)}")
        if not all(math.isfinite(v) for v in values):
            raise CFError(f"non-finite parameter in {values}")
        if kind in (ModelKind.IDM, ModelKind.NEWELL, ModelKind.LINEAR_NEWELL):
            if min(values) <= 0:
                raise CFError(f"{kind.name} parameters must be strictly positive, got {values}")
        elif kind == ModelKind.OVM:
            c1, c2, _, c4, c5 = values
            if c1 <= 0 or c2 <= 0 or c4 <= 0 or c5 < 0:
                raise CFError(f"OVM needs c1, c2, c4 > 0 and c5 >= 0, got {values}")
        packed = np.zeros(N_PARAMS)
        packed[: len(values)] = values
        packed.setflags(write=False)
        object.__setattr__(self, "_packed", packed)

    @classmethod
    def idm(cls, c1=35.0, c2=1.3, c3=2.0, c4=1.1, c5=1.5) -> "CFParams":
        return cls(ModelKind.IDM, (c1, c2, c3, c4, c5))

    @property
    def packed(self) -> np.ndarray:
        """Fixed length float array used by the compiled kernels."""
        return self._packed

    @property
    def code(self) -> int:
        return int(self.kind)

    @property
    def first_order(self) -> bool:
        return is_first_order(int(self.kind))

    @property
    def max_speed(self) -> float:
        return max_speed(int(self.kind), self._packed)

    @property
    def jam_spacing(self) -> float:
        return jam_spacing(int(self.kind), self._packed)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(PARAM_NAMES[self.kind], self.values))


@dataclass(frozen=True)
class CFInput:
    headway: float
    own_speed: float
    leader_speed: float


# --------------------------------------------------------------------------
# compiled kernels
# --------------------------------------------------------------------------

@numba.njit(cache=True)
def idm_kernel(s, v, vl, c1, c2, c3, c4, c5):
    sstar = c3 + c2 * v + v * (v - vl) / (2.0 * math.sqrt(c4 * c5))
    return c4 * (1.0 - (v / c1) ** 4 - (sstar / s) ** 2)


@numba.njit(cache=True)
def ovm_optimal_speed(s, c1, c2, c3, c5):
    return c1 * (math.tanh(c2 * s - c3 - c5) - math.tanh(-c3))


@numba.njit(cache=True)
def ovm_kernel(s, v, c1, c2, c3, c4, c5):
    return c4 * (ovm_optimal_speed(s, c1, c2, c3, c5) - v)


@numba.njit(cache=True)
def newell_speed_kernel(s, delta, tau, vf):
    # speed that reaches min(x + vf*tau, x_lead - l_lead - delta) after tau
    v = (s - delta) / tau
    if v > vf:
        v = vf
    return v


@numba.njit(cache=True)
def is_first_order(kind):
    return kind == NEWELL or kind == LINEAR_NEWELL


@numba.njit(cache=True)
def cf_eval(kind, p, s, v, vl):
    """Acceleration (second order) or speed (first order) from one input triple."""
    if kind == IDM:
        return idm_kernel(s, v, vl, p[0], p[1], p[2], p[3], p[4])
    elif kind == OVM:
        return ovm_kernel(s, v, p[0], p[1], p[2], p[3], p[4])
    elif kind == NEWELL:
        return newell_speed_kernel(s, p[0], p[1], p[2])
    elif kind == LINEAR_NEWELL:
        return p[0] * (s - p[1])
    else:
        return p[0] * s + p[1] * v + p[2] * vl + p[3]


@numba.njit(cache=True)
def free_eval(kind, p, v):
    """Limit of the model when the leader goes to infinity at max speed."""
    if kind == IDM:
        return p[3] * (1.0 - (v / p[0]) ** 4)
    elif kind == OVM:
        return p[3] * (p[0] * (1.0 - math.tanh(-p[2])) - v)
    elif kind == NEWELL:
        return p[2]
    elif kind == LINEAR_NEWELL:
        # unbounded speed-headway relation, keep cruising
        return v
    else:
        return 0.0


@numba.njit(cache=True)
def max_speed(kind, p):
    if kind == IDM:
        return p[0]
    elif kind == OVM:
        return p[0] * (1.0 - math.tanh(-p[2]))
    elif kind == NEWELL:
        return p[2]
    return np.inf


@numba.njit(cache=True)
def jam_spacing(kind, p):
    if kind == IDM:
        return p[2]
    elif kind == OVM:
        return p[4] / p[1]
    elif kind == NEWELL:
        return p[0]
    elif kind == LINEAR_NEWELL:
        return p[1]
    return -p[3] / p[0]


@numba.njit(cache=True)
def eql_headway_kernel(kind, p, v):
    """Equilibrium headway, NaN when ``v`` has no equilibrium."""
    if v < 0.0:
        return np.nan
    if kind == IDM:
        r = 1.0 - (v / p[0]) ** 4
        if r <= 0.0:
            return np.nan
        return (p[2] + p[1] * v) / math.sqrt(r)
    elif kind == OVM:
        arg = v / p[0] + math.tanh(-p[2])
        if arg >= 1.0:
            return np.nan
        return (math.atanh(arg) + p[2] + p[4]) / p[1]
    elif kind == NEWELL:
        if v >= p[2]:
            return np.nan
        return p[0] + v * p[1]
    elif kind == LINEAR_NEWELL:
        return p[1] + v / p[0]
    else:
        if p[0] == 0.0:
            return np.nan
        return -((p[1] + p[2]) * v + p[3]) / p[0]


@numba.njit(cache=True)
def _eql_residual(kind, p, s, v):
    if is_first_order(kind):
        return cf_eval(kind, p, s, v, v) - v
    return cf_eval(kind, p, s, v, v)


@numba.njit(cache=True)
def eql_speed_kernel(kind, p, s):
    """Equilibrium speed for headway ``s``; 0 at or below jam spacing."""
    if s <= jam_spacing(kind, p):
        return 0.0
    if kind == OVM:
        return ovm_optimal_speed(s, p[0], p[1], p[2], p[4])
    elif kind == NEWELL:
        return newell_speed_kernel(s, p[0], p[1], p[2])
    elif kind == LINEAR_NEWELL:
        return p[0] * (s - p[1])
    elif kind == LINEAR_SECOND_ORDER:
        return -(p[0] * s + p[3]) / (p[1] + p[2])
    # IDM: acceleration at (s, v, v) decreases in v, bisect on [0, c1]
    lo = 0.0
    hi = p[0]
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        a = idm_kernel(s, mid, mid, p[0], p[1], p[2], p[3], p[4])
        if abs(a) < _EQL_TOL or hi - lo < 1e-15 * p[0]:
            return mid
        if a > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@numba.njit(cache=True)
def eql_headway_bisect(kind, p, v):
    """Bracketed root find of the zero-acceleration headway (generic fallback)."""
    lo = jam_spacing(kind, p)
    hi = _S_MAX
    if _eql_residual(kind, p, hi, v) < 0.0:
        return np.nan
    for _ in range(300):
        mid = 0.5 * (lo + hi)
        a = _eql_residual(kind, p, mid, v)
        if abs(a) < _EQL_TOL:
            return mid
        if a > 0.0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


@numba.njit(cache=True)
def ska_kernel(t_star, c2, tau, dt):
    return t_star + (c2 - t_star) * dt / tau


# --------------------------------------------------------------------------
# public API
# --------------------------------------------------------------------------

def _check_finite(inp: CFInput):
    if not (math.isfinite(inp.headway) and math.isfinite(inp.own_speed)
            and math.isfinite(inp.leader_speed)):
        raise CFError(f"non-finite car following input {inp}")


def _require(p: CFParams, kind: ModelKind):
    if p.kind != kind:
        raise CFError(f"expected {kind.name} parameters, got {p.kind.name}")


def idm_accel(inp: CFInput, p: CFParams) -> float:
    """IDM acceleration ``c4 (1 - (v/c1)^4 - (s*/s)^2)``."""
    _require(p, ModelKind.IDM)
    _check_finite(inp)
    if inp.headway <= 0:
        raise CFError(f"IDM needs a positive headway, got {inp.headway}")
    return float(idm_kernel(inp.headway, inp.own_speed, inp.leader_speed, *p.values))


def ovm_accel(inp: CFInput, p: CFParams) -> float:
    _require(p, ModelKind.OVM)
    _check_finite(inp)
    return float(ovm_kernel(inp.headway, inp.own_speed, *p.values))


def ovm_optimal_velocity(s: float, p: CFParams) -> float:
    _require(p, ModelKind.OVM)
    c1, c2, c3, _, c5 = p.values
    return float(ovm_optimal_speed(s, c1, c2, c3, c5))


def newell_target_position(x: float, x_lead: float, l_lead: float, p: CFParams) -> float:
    """Position one time shift ahead, ``min(x + vf*tau, x_lead - l_lead - delta)``."""
    _require(p, ModelKind.NEWELL)
    if not x_lead - l_lead > x:
        raise CFError(f"collision: follower at {x} overlaps leader rear {x_lead - l_lead}")
    delta, tau, vf = p.values
    return min(x + vf * tau, x_lead - l_lead - delta)


def linear_newell_rate(inp: CFInput, p: CFParams) -> float:
    _require(p, ModelKind.LINEAR_NEWELL)
    b1, b2 = p.values
    return b1 * (inp.headway - b2)


def linear_second_order_accel(inp: CFInput, p: CFParams) -> float:
    _require(p, ModelKind.LINEAR_SECOND_ORDER)
    b1, b2, b3, b4 = p.values
    return b1 * inp.headway + b2 * inp.own_speed + b3 * inp.leader_speed + b4


def evaluate(inp: CFInput, p: CFParams) -> float:
    """Dispatch to the model: acceleration for second order, speed for first order."""
    _check_finite(inp)
    return float(cf_eval(p.code, p.packed, inp.headway, inp.own_speed, inp.leader_speed))


def free_flow(v: float, p: CFParams) -> float:
    """Downstream free boundary: model limit for a leader at infinity driving at max speed."""
    return float(free_eval(p.code, p.packed, v))


def equilibrium_headway(v: float, p: CFParams) -> float:
    """Headway giving zero acceleration at own speed = leader speed = ``v``."""
    if v < 0:
        raise CFError(f"negative speed {v}")
    s = eql_headway_kernel(p.code, p.packed, v)
    if math.isnan(s):
        raise NoEquilibriumError(f"{p.kind.name} has no equilibrium at v={v} (max speed {p.max_speed})")
    return float(s)


def equilibrium_speed(s: float, p: CFParams) -> float:
    """Inverse of :func:`equilibrium_headway`; 0 at or below jam spacing."""
    return float(eql_speed_kernel(p.code, p.packed, s))


def ska_relaxed_time_headway(t_star: float, c2: float, tau: float, dt: float) -> float:
    """One Euler step of the time-headway relaxation benchmark toward ``c2``."""
    if tau <= 0 or dt <= 0:
        raise CFError("tau and dt must be positive")
    return float(ska_kernel(t_star, c2, tau, dt))


def max_flow_speed(p: CFParams, vehicle_length: float, n: int = 20001) -> float:
    """Speed maximizing equilibrium flow ``v / (s_eql(v) + length)``."""
    vmax = p.max_speed
    hi = vmax if math.isfinite(vmax) else 100.0
    vs = np.linspace(0.0, hi, n)[1:-1]
    flows = [v / (eql_headway_kernel(p.code, p.packed, v) + vehicle_length) for v in vs]
    k = int(np.nanargmax(flows))
    # refine on the bracketing grid cell
    from scipy.optimize import minimize_scalar

    lo, up = vs[max(k - 1, 0)], vs[min(k + 1, len(vs) - 1)]
    res = minimize_scalar(lambda v: -v / (eql_headway_kernel(p.code, p.packed, v) + vehicle_length),
                          bounds=(lo, up), method="bounded", options={"xatol": 1e-10})
    return float(res.x)

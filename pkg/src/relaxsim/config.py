"""INI configuration files.

Every run starts from the packaged ``defaults.cfg`` and applies the user's
file on top of it.  Problems are reported as ``path:line: message``.

Inflow schedules are written as a single rate (veh/hr per lane) or as
``time:rate`` knots, e.g. ``0:0, 1440:2196``.  Separate per-lane mainline
schedules with ``|``.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Optional

from .calibration import GAConfig
from .cf_models import CFParams, ModelKind
from .lane_changing import LCParams
from .measurement import BreakdownCriteria
from .relaxation import RelaxationConfig
from .simulation import RoadNetwork, Schedule, SimConfig

DEFAULTS_NAME = "defaults.cfg"


class ConfigFileError(ValueError):
    def __init__(self, path, line: Optional[int], message: str):
        self.path, self.line, self.message = str(path), line, message
        where = f"{self.path}:{line}" if line else self.path
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class CapacitySettings:
    ramp_inflows: tuple = (400.0,)
    relax_times: tuple = (0.0, 2.0, 4.0, 7.0, 10.0)
    positive_only: tuple = (10.0,)
    seeds: tuple = (0,)
    duration: float = 2700.0
    lo: float = 2000.0
    hi: float = 5000.0
    resolution: float = 4.0
    criteria: BreakdownCriteria = field(default_factory=BreakdownCriteria)


@dataclass(frozen=True)
class CalibrationSettings:
    model: str = "IDM"
    relax_mode: str = "1p"
    seed: int = 0
    ga: GAConfig = field(default_factory=GAConfig)


@dataclass(frozen=True)
class AnalysisSettings:
    tte_relax_times: tuple = (0.0, 2.0, 4.0, 7.0, 10.0, 15.0)
    tte_target: float = 24.3
    fig5_gamma_s: float = 17.0
    fig5_speed: float = 20.0
    fig5_c: float = 15.0
    fd_x_width: float = 100.0
    fd_t_width: float = 120.0


@dataclass(frozen=True)
class Config:
    sim: SimConfig
    capacity: CapacitySettings
    calibration: CalibrationSettings
    analysis: AnalysisSettings
    sources: tuple = ()


# -- value parsers ----------------------------------------------------------

def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _floats(s: str) -> tuple:
    s = s.strip()
    return tuple(float(x) for x in re.split(r"[,\s]+", s) if x) if s else ()


def _ints(s: str) -> tuple:
    return tuple(int(x) for x in _floats(s) if float(x) == int(x)) if s.strip() else ()


def parse_schedule(s: str) -> Schedule:
    s = s.strip()
    if ":" not in s:
        return Schedule.constant(float(s))
    knots = [k.split(":") for k in re.split(r"[,\s]+", s) if k]
    if any(len(k) != 2 for k in knots):
        raise ValueError(f"bad schedule {s!r}; use time:rate pairs")
    return Schedule(tuple(float(t) for t, _ in knots), tuple(float(q) for _, q in knots))


def _schedules(s: str) -> tuple:
    return tuple(parse_schedule(p) for p in s.split("|"))


# (section, key) -> parser; the key names the destination field
SCHEMA: dict[str, dict[str, Callable[[str], Any]]] = {
    "simulation": {"dt": float, "horizon": float, "seed": int, "b1": float, "b2": float,
                   "vehicle_length": float, "record_every": int, "lane_changing": _bool,
                   "capacity": int},
    "network": {"length": float, "n_lanes": int, "merge_start": float, "merge_end": float,
                "ramp_start": float, "detectors": _floats, "has_ramp": _bool},
    "inflow": {"mainline": _schedules, "onramp": parse_schedule},
    "car_following": {"model": str, "params": _floats},
    "relaxation": {"c": float, "mode": str, "c_s": float, "c_v": float, "safeguard": _bool,
                   "safeguard_alpha": float, "safeguard_beta": float, "safeguard_eps": float},
    "lane_changing": {k: float for k in ("d1", "d2", "d3", "d4", "d5", "d6", "d7", "d8", "d9",
                                         "a1", "a2", "a3")},
    "capacity": {"ramp_inflows": _floats, "relax_times": _floats, "positive_only": _floats,
                 "seeds": _ints, "duration": float, "lo": float, "hi": float,
                 "resolution": float, "threshold": float, "window": float, "sustain": float,
                 "wave_band": float, "wave_window": float, "wave_baseline": float,
                 "wave_refractory": float, "wave_lanes": str},
    "calibration": {"model": str, "relax_mode": str, "seed": int, "population": int,
                    "generations": int, "tournament": int, "crossover": float,
                    "mutation": float, "sigma": float, "elites": int, "blend_alpha": float,
                    "polish": _bool, "polish_evals": int,
                    "polish_starts": int},
    "analysis": {"tte_relax_times": _floats, "tte_target": float, "fig5_gamma_s": float,
                 "fig5_speed": float, "fig5_c": float, "fd_x_width": float,
                 "fd_t_width": float},
}


def _read(path: Path, text: str, values: dict, lines: dict) -> None:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",),
                                   strict=True)
    try:
        cp.read_string(text, source=str(path))
    except configparser.ParsingError as e:
        lineno = e.errors[0][0] if e.errors else None
        raise ConfigFileError(path, lineno, "cannot parse line") from None
    except configparser.Error as e:
        raise ConfigFileError(path, getattr(e, "lineno", None), e.message) from None
    # locate every option so later errors can point at it
    section = None
    for i, raw in enumerate(text.splitlines(), start=1):
        m = re.match(r"\s*\[([^\]]+)\]", raw)
        if m:
            section = m.group(1).strip()
            continue
        m = re.match(r"\s*([^#;=:\s][^=:]*?)\s*[=:]", raw)
        if m and section is not None:
            lines[(section, m.group(1).strip().lower())] = (path, i)
    for sec in cp.sections():
        if sec not in SCHEMA:
            where = next((v for (s, _), v in lines.items() if s == sec), (path, None))
            raise ConfigFileError(where[0], _section_line(text, sec), f"unknown section [{sec}]")
        for key, raw in cp.items(sec):
            where = lines.get((sec, key), (path, None))
            parser = SCHEMA[sec].get(key)
            if parser is None:
                raise ConfigFileError(*where, f"unknown option {key!r} in [{sec}]")
            try:
                values[(sec, key)] = parser(raw)
            except ValueError as e:
                raise ConfigFileError(*where, f"{sec}.{key}: {e}") from None


def _section_line(text: str, sec: str) -> Optional[int]:
    for i, raw in enumerate(text.splitlines(), start=1):
        if raw.strip() == f"[{sec}]":
            return i
    return None


def _pick(values: dict, sec: str) -> dict:
    return {k: v for (s, k), v in values.items() if s == sec}


def _build(values: dict, lines: dict, sources) -> Config:
    def fail(sec, key, msg):
        path, line = lines.get((sec, key), (sources[-1], None))
        raise ConfigFileError(path, line, msg)

    user = str(sources[-1])

    def blame(sec, kw, msg, key_hint):
        # prefer keys named in the message, then keys set by the user's file
        keys = [k for k in kw if (sec, k) in lines]
        named = [k for k in keys if re.search(rf"\b{re.escape(k)}\b", msg)]
        for group in (named, [key_hint] if key_hint in keys else [], keys):
            mine = [k for k in group if str(lines[(sec, k)][0]) == user]
            if mine:
                return mine[0]
        return (named or keys or [key_hint])[0]

    def make(sec, factory, kw, key_hint=None, keys=None):
        try:
            return factory(**kw)
        except (ValueError, TypeError) as e:
            fail(sec, blame(sec, keys or kw, str(e), key_hint), f"[{sec}] {e}")

    net = make("network", RoadNetwork, _pick(values, "network"))
    cf_kw = _pick(values, "car_following")
    try:
        kind = ModelKind.parse(cf_kw.get("model", "IDM"))
    except ValueError as e:
        fail("car_following", "model", str(e))
    # the default parameters belong to the default model
    mine = {k for (sec, k), (path, _) in lines.items()
            if sec == "car_following" and str(path) == user}
    if "model" in mine and "params" not in mine and kind != ModelKind.IDM:
        fail("car_following", "model", f"model {kind.name} needs its own params")
    cf = make("car_following", CFParams, {"kind": kind, "values": cf_kw.get("params", ())},
              "params", keys=("params", "model"))
    relax_kw = _pick(values, "relaxation")
    relax = make("relaxation", RelaxationConfig, relax_kw)
    lc_kw = {k: (int(v) if k in ("d8", "d9") and v == int(v) else v)
             for k, v in _pick(values, "lane_changing").items()}
    lc = make("lane_changing", LCParams, lc_kw)
    sim_kw = _pick(values, "simulation")
    inflow = _pick(values, "inflow")
    sim = make("simulation", SimConfig,
               dict(sim_kw, network=net, relax=relax, lc=lc, cf=cf,
                    mainline_inflow=inflow.get("mainline", (0.0,)),
                    onramp_inflow=inflow.get("onramp", 0.0)))

    cap_kw = _pick(values, "capacity")
    crit_keys = {f.name for f in fields(BreakdownCriteria)}
    crit = make("capacity", BreakdownCriteria, {k: v for k, v in cap_kw.items() if k in crit_keys})
    cap = make("capacity", CapacitySettings,
               dict({k: v for k, v in cap_kw.items() if k not in crit_keys}, criteria=crit))
    if cap.lo >= cap.hi:
        fail("capacity", "hi", "capacity search needs lo < hi")

    cal_kw = _pick(values, "calibration")
    ga_keys = {f.name for f in fields(GAConfig)}
    ga = make("calibration", GAConfig, {k: v for k, v in cal_kw.items() if k in ga_keys})
    cal = make("calibration", CalibrationSettings,
               dict({k: v for k, v in cal_kw.items() if k not in ga_keys}, ga=ga))
    try:
        ModelKind.parse(cal.model)
    except ValueError as e:
        fail("calibration", "model", str(e))
    ana = make("analysis", AnalysisSettings, _pick(values, "analysis"))
    return Config(sim, cap, cal, ana, tuple(str(s) for s in sources))


def defaults_text() -> str:
    return resources.files(__package__).joinpath(DEFAULTS_NAME).read_text()


def load_config(path=None, *, seed: Optional[int] = None) -> Config:
    """Defaults overlaid with ``path`` (if given); ``seed`` overrides both."""
    values: dict = {}
    lines: dict = {}
    sources = [Path(DEFAULTS_NAME)]
    _read(sources[0], defaults_text(), values, lines)
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as e:
            raise ConfigFileError(p, None, f"cannot read config: {e.strerror}") from None
        sources.append(p)
        _read(p, text, values, lines)
    cfg = _build(values, lines, sources)
    if seed is not None:
        cfg = replace(cfg, sim=replace(cfg.sim, seed=seed),
                      calibration=replace(cfg.calibration, seed=seed))
    return cfg

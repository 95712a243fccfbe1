"""Noise-free synthetic trajectory data with known generating parameters."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..cf_models import CFParams, equilibrium_headway
from .dataset import NO_LEADER, TrajectoryDataset, VehicleTrack
from .replay import Replayer, parse_relax_mode, prepare_replay

FOLLOWER_LANE = 2
RAMP_LANE = 7


@dataclass(frozen=True)
class SyntheticScenario:
    """Layout of the generated data.

    Each follower starts at equilibrium behind a scripted leader whose speed
    oscillates around a base speed.  It then sees ``switches`` leader changes
    at random times, each new leader appearing at ``gap_factor`` times the
    equilibrium headway.  A fraction of followers are merges: they drive
    without a leader until the first switch.
    """

    n_followers: int = 20
    duration: float = 60.0
    dt: float = 0.1
    switches: int = 1
    first_switch: tuple = (12.0, 30.0)
    min_spacing: float = 8.0
    base_speed: tuple = (12.0, 24.0)
    amplitude: tuple = (0.5, 3.0)
    period: tuple = (15.0, 40.0)
    speed_jump: tuple = (-3.0, 3.0)
    gap_factor: tuple = (0.4, 0.8)
    cut_out_fraction: float = 0.25
    cut_out_factor: tuple = (1.3, 1.8)
    merge_fraction: float = 0.25
    length: float = 4.5

    @classmethod
    def no_lc(cls, **kw) -> "SyntheticScenario":
        return cls(switches=0, merge_fraction=0.0, **kw)


def _leader_profile(rng, sc: SyntheticScenario, t, base):
    amp = rng.uniform(*sc.amplitude)
    per = rng.uniform(*sc.period)
    ph = rng.uniform(0, 2 * np.pi)
    v = base + amp * np.sin(2 * np.pi * t / per + ph)
    return np.maximum(v, 0.5)


def _integrate(v, dt, anchor_index, anchor_pos):
    x = np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * dt)])
    return x - x[anchor_index] + anchor_pos


def make_synthetic_dataset(scenario: SyntheticScenario = SyntheticScenario(),
                           true_params: Optional[CFParams] = None, c: float = 10.0,
                           relax_mode: str = "1p", relax_extra: Sequence[float] = (),
                           seed: int = 0) -> TrajectoryDataset:
    """Simulate followers with known parameters behind scripted leaders.

    ``c`` is the relaxation time used by the generator in ``1p`` mode; for
    other modes pass the relaxation parameters in ``relax_extra``.  Followers
    get ids ``1..n_followers``; scripted leaders get ids from 1001 on and have
    no leader themselves.
    """
    p = true_params or CFParams.idm()
    mode = parse_relax_mode(relax_mode)
    extra = tuple(relax_extra) if relax_extra else ((c,) if mode == "1p" else ())
    sc = scenario
    rng = np.random.default_rng(seed)
    n = int(round(sc.duration / sc.dt))
    t = np.arange(n) * sc.dt
    ds = TrajectoryDataset(sc.dt)
    next_leader = 1001
    params = np.concatenate([np.asarray(p.values, dtype=float), extra])

    for fid in range(1, sc.n_followers + 1):
        base = rng.uniform(*sc.base_speed)
        merge = sc.switches > 0 and rng.random() < sc.merge_fraction
        v0 = base
        x0 = 0.0
        leader = np.full(n, NO_LEADER, dtype=np.int64)
        lane = np.full(n, FOLLOWER_LANE, dtype=np.int64)
        # switch frames, increasing and separated by min_spacing
        ks = []
        tk = rng.uniform(*sc.first_switch)
        for _ in range(sc.switches):
            k = int(round(tk / sc.dt))
            if k >= n - 1:
                break
            ks.append(k)
            tk += sc.min_spacing + rng.uniform(0, sc.min_spacing)

        track = VehicleTrack(fid, 0, np.full(n, x0), np.full(n, v0), lane, leader, sc.length, merge)
        ds.add(track)

        def state_at(k):
            rp = Replayer(prepare_replay(ds, fid), p.kind, mode)
            sim = rp.simulate(params)
            return sim.pos[k], sim.speed[k], sim

        if not merge:
            lid = next_leader
            next_leader += 1
            vl = _leader_profile(rng, sc, t, base)
            gap = equilibrium_headway(v0, p)
            ds.add(VehicleTrack(lid, 0, _integrate(vl, sc.dt, 0, x0 + gap + sc.length), vl,
                                np.full(n, FOLLOWER_LANE), np.full(n, NO_LEADER), sc.length))
            leader[:] = lid
        else:
            lane[:] = RAMP_LANE

        for k in ks:
            xf, vf, _ = state_at(k)
            lid = next_leader
            next_leader += 1
            vl = _leader_profile(rng, sc, t, max(base + rng.uniform(*sc.speed_jump), 1.0))
            if not merge and rng.random() < sc.cut_out_fraction:
                factor = rng.uniform(*sc.cut_out_factor)
            else:
                factor = rng.uniform(*sc.gap_factor)
            # the equilibrium at max speed is degenerate for some models
            gap = factor * equilibrium_headway(min(vf, 0.99 * p.max_speed), p)
            ds.add(VehicleTrack(lid, 0, _integrate(vl, sc.dt, k, xf + gap + sc.length), vl,
                                np.full(n, FOLLOWER_LANE), np.full(n, NO_LEADER), sc.length))
            leader[k:] = lid
            lane[k:] = FOLLOWER_LANE

        _, _, sim = state_at(0)
        track.pos[:] = sim.pos
        track.speed[:] = sim.speed
    return ds

"""Figures written next to the CSV outputs."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

DPI = 120


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return path


def time_space(traj: np.ndarray, path, lane: int, max_points: int = 400_000) -> Path:
    """Time-space diagram of one lane coloured by speed."""
    rows = traj[traj[:, 2] == lane]
    if len(rows) > max_points:
        rows = rows[:: int(np.ceil(len(rows) / max_points))]
    fig, ax = plt.subplots(figsize=(8, 4.5))
    sc = ax.scatter(rows[:, 0], rows[:, 3], c=rows[:, 4], s=0.2, cmap="RdYlGn", vmin=0,
                    vmax=max(1.0, float(rows[:, 4].max()) if len(rows) else 1.0),
                    rasterized=True)
    fig.colorbar(sc, ax=ax, label="speed (m/s)")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("position (m)")
    ax.set_title(f"lane {lane}")
    return _save(fig, path)


def detector_speeds(det: np.ndarray, path, window: float = 120.0) -> Path:
    from .measurement import rolling_speed

    fig, ax = plt.subplots(figsize=(8, 3.5))
    for d in np.unique(det[:, 0]).astype(int):
        t, v = rolling_speed(det[det[:, 0] == d], window)
        ax.plot(t, v, lw=1, label=f"detector {d}")
    ax.set_xlabel("time (s)")
    ax.set_ylabel(f"{window:g} s mean speed (m/s)")
    ax.legend(frameon=False)
    return _save(fig, path)


def fundamental_diagram(points: np.ndarray, path, xs: Sequence[float] = ()) -> Path:
    """Flow-density scatter; ``points`` rows are (x, t, density veh/km, flow veh/hr)."""
    fig, ax = plt.subplots(figsize=(6, 4.5))
    groups = np.unique(points[:, 0]) if len(points) else []
    keep = [x for x in groups if not xs or any(abs(x - y) < 1e-9 for y in xs)]
    for x in keep:
        p = points[points[:, 0] == x]
        ax.scatter(p[:, 2], p[:, 3], s=6, label=f"x = {x:g} m")
    ax.set_xlabel("density (veh/km)")
    ax.set_ylabel("flow (veh/hr)")
    if len(keep) <= 10:
        ax.legend(frameon=False, fontsize=7)
    return _save(fig, path)


def capacity_table(rows: Sequence[Mapping], path) -> Path:
    """Capacity and discharge against relaxation time, both-signs and positive-only."""
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.8))
    for mode, marker in (("both_signs", "o"), ("positive_only", "s")):
        sel = [r for r in rows if r["mode"] == mode]
        if not sel:
            continue
        for q in sorted({r["ramp_inflow"] for r in sel}):
            s = sorted((r for r in sel if r["ramp_inflow"] == q), key=lambda r: r["relax"])
            c = [r["relax"] for r in s]
            a1.plot(c, [r["capacity"] for r in s], marker=marker, label=f"capacity {mode} {q:g}")
            a1.plot(c, [r["discharge"] for r in s], marker=marker, ls="--",
                    label=f"discharge {mode} {q:g}")
            a2.plot(c, [r["period_min"] for r in s], marker=marker, label=f"{mode} {q:g}")
    a1.set_xlabel("relaxation time (s)")
    a1.set_ylabel("veh/hr")
    a1.legend(frameon=False, fontsize=7)
    a2.set_xlabel("relaxation time (s)")
    a2.set_ylabel("wave period (min)")
    a2.legend(frameon=False, fontsize=7)
    return _save(fig, path)


def speed_profiles(profiles: Mapping[str, tuple], path, xlabel="time (s)") -> Path:
    """Overlay of named ``(t, speed)`` series."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for name, (t, v) in profiles.items():
        ax.plot(t, v, lw=1.2, label=name)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("speed (m/s)")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def tte_table(rows: Sequence[tuple], path, reference: Sequence[tuple] = ()) -> Path:
    """``rows`` are (relax time, TTE, DT); ``reference`` is drawn with hollow markers."""
    fig, ax = plt.subplots(figsize=(6, 4))
    r = np.asarray(rows, dtype=float)
    ax.plot(r[:, 0], r[:, 1], "o-", label="TTE")
    ax.plot(r[:, 0], r[:, 2], "s-", label="DT")
    if len(reference):
        ref = np.asarray(reference, dtype=float)
        ax.plot(ref[:, 0], ref[:, 1], "o", mfc="none", color="C0", label="TTE reference")
        ax.plot(ref[:, 0], ref[:, 2], "s", mfc="none", color="C1", label="DT reference")
    ax.set_xlabel("relaxation time (s)")
    ax.set_ylabel("s")
    ax.legend(frameon=False)
    return _save(fig, path)


def calibration_errors(mse: Mapping[str, Sequence[float]], path) -> Path:
    """Sorted per-vehicle MSE for each calibration variant on a log axis."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, vals in mse.items():
        v = np.sort(np.maximum(np.asarray(vals, dtype=float), 1e-12))
        ax.plot(np.arange(1, len(v) + 1), v, marker=".", label=name)
    ax.set_yscale("log")
    ax.set_xlabel("vehicle (sorted)")
    ax.set_ylabel("position MSE (m$^2$)")
    ax.legend(frameon=False)
    return _save(fig, path)

"""Command line entry point: ``relaxsim <command> [options]``.

Each command writes CSV files, figures and a ``manifest.json`` into its
output directory.  Without ``--out`` the directory is ``<root>/<command>``
where ``<root>`` is ``$RELAXSIM_OUT`` or ``./runs``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .analysis import TABLE6_REFERENCE, fig5_profiles, table6
from .calibration import (DatasetError, SyntheticScenario, TrajectoryDataset, calibrate_dataset,
                          make_synthetic_dataset, metrics_report, read_ngsim, write_results)
from .cf_models import CFParams, ModelKind
from .config import Config, ConfigFileError, load_config
from .measurement import (MeasurementError, capacity_drop_experiment, discharge_rate, fd_points,
                          write_fd_points)
from .relaxation import RelaxationConfig, RelaxMode
from .simulation import ConfigError, Schedule, run

OUT_ENV = "RELAXSIM_OUT"
MANIFEST = "manifest.json"
ANALYSES = ("fig5", "tte_table", "fd")

# inflow used by ``analyze fd`` when the config has none: the mainline ramps
# to 2196 veh/hr/lane over 24 min, the on-ramp from 0 to 800 veh/hr between
# minutes 34 and 58, two hours in total
FD_MAINLINE = Schedule((0.0, 1440.0), (0.0, 2196.0))
FD_ONRAMP = Schedule((2040.0, 3480.0), (0.0, 800.0))
FD_HORIZON = 7200.0
FD_RELAX = 8.7


class CommandError(RuntimeError):
    pass


@dataclass
class RunManifest:
    command: str
    argv: list
    config_path: Optional[str]
    config_sha256: Optional[str]
    seed: Optional[int]
    out_dir: str
    version: str
    started: str
    duration_s: float = 0.0
    outputs: list = field(default_factory=list)
    status: str = "ok"

    def write(self, out_dir: Path) -> Path:
        """Atomic write: the manifest either exists complete or not at all."""
        path = out_dir / MANIFEST
        fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=".manifest-", suffix=".tmp")
        try:
            with os.fdopen(fd, "w") as fh:
                json.dump(asdict(self), fh, indent=2, sort_keys=True)
                fh.write("\n")
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return path

    @classmethod
    def read(cls, path) -> "RunManifest":
        with open(path) as fh:
            return cls(**json.load(fh))


def _sha256(path) -> Optional[str]:
    if path is None:
        return None
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_rows(path: Path, header: Sequence[str], rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def _fmt(x, digits: int = 6) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return f"{x:.{digits}g}" if isinstance(x, float) else str(x)


# -- simulate --------------------------------------------------------------

def cmd_simulate(cfg: Config, args, out: Path) -> list[Path]:
    sim = cfg.sim if args.horizon is None else replace(cfg.sim, horizon=args.horizon)
    res = run(sim)
    outs = [res.write_trajectories(out / "trajectories.csv"),
            res.write_detectors(out / "detectors.csv"),
            res.write_events(out / "events.csv")]
    _write_rows(out / "summary.csv", ["key", "value"],
                [(k, v) for k, v in sorted(res.stats.items())] + [("t_end", _fmt(res.t_end))])
    outs.append(out / "summary.csv")
    if args.plots and len(res.trajectories):
        from . import plotting
        for lane in range(sim.network.n_total_lanes):
            outs.append(plotting.time_space(res.trajectories, out / f"time_space_lane{lane}.png",
                                            lane))
        if len(res.detectors):
            outs.append(plotting.detector_speeds(res.detectors, out / "detector_speeds.png"))
    return outs


# -- capacity --------------------------------------------------------------

CAPACITY_HEADER = ["ramp_inflow", "mode", "relax", "n_seeds", "capacity", "capacity_std",
                   "discharge", "discharge_std", "drop_pct", "drop_std", "period_min",
                   "period_std", "failed_seeds"]
RUN_HEADER = ["ramp_inflow", "mode", "relax", "seed", "capacity", "mainline_capacity",
              "discharge", "discharge_by_lane", "drop_pct", "period_min", "breakdown_time",
              "error"]


def _capacity_job(task):
    sim, q, mode, c, seed, kw = task
    relax = RelaxationConfig(c, RelaxMode.POSITIVE_ONLY if mode == "positive_only"
                             else RelaxMode.BOTH_SIGNS)
    base = replace(sim, relax=relax, seed=seed, record_every=0)
    try:
        return task, capacity_drop_experiment(base, q, seed=seed, **kw), None
    except MeasurementError as e:
        return task, None, str(e)


def cmd_capacity(cfg: Config, args, out: Path) -> list[Path]:
    cs = cfg.capacity
    ramps = tuple(args.ramp) if args.ramp is not None else cs.ramp_inflows
    relax = tuple(args.relax) if args.relax is not None else cs.relax_times
    pos = tuple(args.positive_only) if args.positive_only is not None else cs.positive_only
    if args.seeds is not None:
        seeds = tuple(args.seeds)
    elif args.seed is not None:
        seeds = (args.seed,)
    else:
        seeds = cs.seeds
    if not relax:
        raise CommandError("the relaxation time list is empty")
    if not ramps or not seeds:
        raise CommandError("need at least one ramp inflow and one seed")
    if not cfg.sim.network.has_ramp:
        raise CommandError("capacity experiments need a network with an on-ramp")
    if any(c < 0 for c in relax + pos) or any(q < 0 for q in ramps):
        raise CommandError("relaxation times and inflows must be nonnegative")
    kw = dict(duration=args.duration or cs.duration, resolution=cs.resolution,
              crit=cs.criteria, lo=cs.lo, hi=cs.hi)
    combos = [(q, "both_signs", c) for q in ramps for c in relax]
    combos += [(q, "positive_only", c) for q in ramps for c in pos]
    tasks = [(cfg.sim, q, mode, float(c), int(s), kw) for q, mode, c in combos for s in seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            results = list(ex.map(_capacity_job, tasks))
    else:
        results = [_capacity_job(t) for t in tasks]

    run_rows, summary, failures = [], [], []
    for (sim, q, mode, c, s, _), rep, err in results:
        if rep is None:
            failures.append(f"ramp {q:g}, {mode}, c={c:g}, seed {s}: {err}")
            run_rows.append([q, mode, c, s] + [""] * 7 + [err])
            continue
        lanes = "/".join(f"{rep.discharge_by_lane[k]:.1f}" for k in sorted(rep.discharge_by_lane))
        run_rows.append([q, mode, c, s, _fmt(rep.capacity), _fmt(rep.mainline_capacity),
                         _fmt(rep.discharge), lanes, _fmt(rep.drop_pct), _fmt(rep.period_min),
                         _fmt(rep.breakdown_time), ""])
    plot_rows = []
    for q, mode, c in combos:
        reps = [rep for (_, q2, m2, c2, _, _), rep, _ in results
                if (q2, m2, c2) == (q, mode, float(c)) and rep is not None]
        n_fail = len(seeds) - len(reps)

        def ms(name):
            vals = np.array([getattr(r, name) for r in reps], dtype=float)
            if not len(vals):
                return math.nan, math.nan
            with np.errstate(invalid="ignore"):
                return float(np.nanmean(vals)), float(np.nanstd(vals))
        cap, dis, drop, per = ms("capacity"), ms("discharge"), ms("drop_pct"), ms("period_min")
        summary.append([q, mode, float(c), len(reps), *map(_fmt, (*cap, *dis, *drop, *per)), n_fail])
        plot_rows.append(dict(ramp_inflow=q, mode=mode, relax=float(c), capacity=cap[0],
                              discharge=dis[0], period_min=per[0]))
    outs = [_write_rows(out / "capacity.csv", CAPACITY_HEADER, summary),
            _write_rows(out / "capacity_runs.csv", RUN_HEADER, run_rows)]
    if args.plots:
        from . import plotting
        outs.append(plotting.capacity_table(plot_rows, out / "capacity.png"))
    if failures:
        raise CommandError("some experiments failed:\n  " + "\n  ".join(failures))
    return outs


# -- calibrate ---------------------------------------------------------------

def _load_dataset(args, cfg: Config, out: Path):
    if args.synthetic:
        sc = SyntheticScenario(n_followers=args.n_vehicles)
        ds = make_synthetic_dataset(sc, CFParams.idm(), c=args.true_c,
                                    seed=cfg.calibration.seed)
        ds.to_csv(out / "synthetic_dataset.csv")
        return ds, [out / "synthetic_dataset.csv"]
    if args.dataset is None:
        raise CommandError("give a dataset path or --synthetic")
    if args.format == "ngsim":
        return read_ngsim(args.dataset, ramp_lanes=args.ramp_lanes), []
    return TrajectoryDataset.from_csv(args.dataset), []


def cmd_calibrate(cfg: Config, args, out: Path) -> list[Path]:
    cc = cfg.calibration
    model = ModelKind.parse(args.model or cc.model)
    mode = args.relax_mode or cc.relax_mode
    ds, outs = _load_dataset(args, cfg, out)
    ids = ds.calibratable_ids()
    if args.limit:
        ids = ids[:args.limit]
    if not ids:
        raise CommandError("no vehicle in the dataset can be calibrated")
    results = calibrate_dataset(ds, model, mode, ids=ids, cfg=cc.ga, seed=cc.seed, jobs=args.jobs)
    write_results(results, out / "calibration_results.csv")
    report = metrics_report(results, ds)
    text = f"model: {model.name}, relaxation: {mode}\n" + report.as_text()
    excluded = ds.excluded_ids()
    if excluded:
        text += f"excluded (leader not recorded): {len(excluded)}\n"
    if args.synthetic and mode == "1p":
        c = np.array([r.params[-1] for r in results])
        text += (f"recovered c: median {np.median(c):.3f} s (true {args.true_c:g}), "
                 f"{np.mean(np.abs(c / args.true_c - 1) <= 0.15):.0%} within 15%\n")
    (out / "metrics.txt").write_text(text)
    outs += [out / "calibration_results.csv", out / "metrics.txt"]
    if args.plots:
        from . import plotting
        outs.append(plotting.calibration_errors({f"{model.name} {mode}": [r.mse for r in results]},
                                                out / "calibration_mse.png"))
    print(text, end="")
    return outs


# -- analyze -----------------------------------------------------------------

def _analyze_fig5(cfg: Config, args, out: Path) -> list[Path]:
    a = cfg.analysis
    outs, series = [], {}
    for model in ("linear_newell", "linear_second_order"):
        for relaxed in (False, True):
            prof = fig5_profiles(model, relaxed, gamma_s=a.fig5_gamma_s, v=a.fig5_speed,
                                 c=a.fig5_c)
            name = f"fig5_{model}_{'relaxed' if relaxed else 'baseline'}"
            path = out / f"{name}.csv"
            prof.to_csv(path)
            outs.append(path)
            series[name[5:]] = (prof.t, prof.speed)
    if args.plots:
        from . import plotting
        outs.append(plotting.speed_profiles(series, out / "fig5.png"))
    return outs


def _analyze_tte(cfg: Config, args, out: Path) -> list[Path]:
    a = cfg.analysis
    relax = tuple(args.relax) if args.relax is not None else a.tte_relax_times
    if not relax:
        raise CommandError("the relaxation time list is empty")
    delta, rows = table6(cfg.sim.cf, relax, target_tte=a.tte_target)
    ref = {c: (tte, dt) for c, tte, dt in TABLE6_REFERENCE}
    path = _write_rows(out / "tte_table.csv",
                       ["relax", "tte", "dt", "reference_tte", "reference_dt", "delta"],
                       [[_fmt(c), _fmt(t), _fmt(d), _fmt(ref.get(c, (None,))[0]),
                         _fmt(ref.get(c, (None, None))[1]), _fmt(delta)] for c, t, d in rows])
    outs = [path]
    if args.plots:
        from . import plotting
        outs.append(plotting.tte_table(rows, out / "tte_table.png",
                                       [r for r in TABLE6_REFERENCE if r[0] in relax]))
    return outs


def _analyze_fd(cfg: Config, args, out: Path) -> list[Path]:
    sim = cfg.sim
    if all(s.is_zero for s in sim.schedules):
        sim = replace(sim, mainline_inflow=(FD_MAINLINE,) * sim.network.n_lanes,
                      onramp_inflow=FD_ONRAMP if sim.network.has_ramp else 0.0,
                      horizon=FD_HORIZON)
    c = FD_RELAX if args.relax is None else (args.relax[0] if args.relax else 0.0)
    # 1 s trajectory sampling is ample for the Edie bins and keeps memory bounded
    every = max(sim.record_every, int(round(1.0 / sim.dt)))
    sim = replace(sim, relax=replace(sim.relax, c=c), record_every=every)
    res = run(sim)
    lanes = list(range(sim.network.n_lanes))
    pts = fd_points(res.trajectories, cfg.analysis.fd_x_width, cfg.analysis.fd_t_width,
                    x_range=(0.0, sim.network.length), t_range=(0.0, sim.horizon), lanes=lanes)
    write_fd_points(out / "fd_points.csv", pts)
    # bins holding each detector
    w = cfg.analysis.fd_x_width
    regions = [(i, math.floor(x / w) * w) for i, x in enumerate(sim.network.detectors)]
    rows = [[i, _fmt(x0), _fmt(r[1]), f"{r[2]:.4f}", f"{r[3]:.2f}"]
            for i, x0 in regions for r in pts if abs(r[0] - x0) < 1e-9]
    _write_rows(out / "fd_detector_regions.csv",
                ["detector", "x_start", "t_start", "density_veh_per_km", "flow_veh_per_hr"], rows)
    last = len(sim.network.detectors) - 1
    det = res.detector(last)
    series = discharge_rate(det, 0.0, sim.horizon, 120.0, t_end=res.t_end)
    _write_rows(out / "discharge.csv", ["t", "flow_veh_per_hr"],
                [[_fmt(t), f"{q:.2f}"] for t, q in zip(series.t_start, series.flow)])
    outs = [out / "fd_points.csv", out / "fd_detector_regions.csv", out / "discharge.csv"]
    if args.plots:
        from . import plotting
        outs.append(plotting.fundamental_diagram(pts, out / "fd.png", [x for _, x in regions]))
    return outs


def cmd_analyze(cfg: Config, args, out: Path) -> list[Path]:
    return {"fig5": _analyze_fig5, "tte_table": _analyze_tte, "fd": _analyze_fd}[args.which](
        cfg, args, out)


# -- wiring --------------------------------------------------------------------

def _float_list(s: str) -> list[float]:
    return [float(x) for x in s.replace(",", " ").split()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI file overriding the defaults")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", type=Path, help=f"output directory (default ${OUT_ENV}/<command>)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("--no-plots", dest="plots", action="store_false", help="skip figures")

    p = argparse.ArgumentParser(prog="relaxsim", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="run the configured simulation")
    s.add_argument("--horizon", type=float, help="override the simulated time in s")

    c = sub.add_parser("capacity", parents=[common],
                       help="capacity, discharge and wave period against relaxation time")
    c.add_argument("--ramp", type=float, nargs="+", help="on-ramp inflows in veh/hr")
    c.add_argument("--relax", type=float, nargs="*", help="relaxation times in s")
    c.add_argument("--positive-only", type=float, nargs="*",
                   help="relaxation times also run in positive-only mode")
    c.add_argument("--seeds", type=int, nargs="+", help="seeds averaged per row")
    c.add_argument("--duration", type=float, help="discharge averaging time in s")

    k = sub.add_parser("calibrate", parents=[common], help="fit car following parameters")
    k.add_argument("dataset", nargs="?", type=Path, help="trajectory CSV")
    k.add_argument("--format", choices=("csv", "ngsim"), default="csv")
    k.add_argument("--ramp-lanes", type=int, nargs="*", default=[7],
                   help="NGSim lanes that mark merging vehicles")
    k.add_argument("--model", help="IDM, OVM or NEWELL")
    k.add_argument("--relax-mode", choices=("none", "1p", "2p", "ska"))
    k.add_argument("--limit", type=int, help="calibrate only the first N vehicles")
    k.add_argument("--synthetic", action="store_true",
                   help="generate a noise-free dataset instead of reading one")
    k.add_argument("--n-vehicles", type=int, default=20)
    k.add_argument("--true-c", type=float, default=10.0)

    a = sub.add_parser("analyze", parents=[common], help="plot-ready data for one artifact")
    a.add_argument("which", choices=ANALYSES)
    a.add_argument("--relax", type=float, nargs="*",
                   help="relaxation times (tte_table) or the single time used by fd")

    r = sub.add_parser("rerun", help="repeat the run recorded in a manifest")
    r.add_argument("manifest", type=Path)
    r.add_argument("--out", type=Path, help="write to this directory instead")
    return p


COMMANDS = {"simulate": cmd_simulate, "capacity": cmd_capacity, "calibrate": cmd_calibrate,
            "analyze": cmd_analyze}


def _out_dir(args) -> Path:
    if args.out is not None:
        return args.out
    return Path(os.environ.get(OUT_ENV, "runs")) / args.command


def _rerun(args) -> int:
    m = RunManifest.read(args.manifest)
    argv = list(m.argv)
    if args.out is not None:
        if "--out" in argv:
            i = argv.index("--out")
            del argv[i:i + 2]
        argv += ["--out", str(args.out)]
    return main(argv)


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "rerun":
        return _rerun(args)
    if args.command == "calibrate" and args.model:
        try:
            ModelKind.parse(args.model)
        except ValueError as e:
            parser.error(str(e))
    if args.jobs < 1:
        parser.error("--jobs must be at least 1")
    if args.command == "capacity" and args.relax is not None and not args.relax:
        parser.error("--relax needs at least one value")

    t0 = time.time()
    started = time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(t0))
    try:
        cfg = load_config(args.config, seed=args.seed)
    except ConfigFileError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(args.command, argv, str(args.config) if args.config else None,
                           _sha256(args.config), cfg.sim.seed, str(out), __version__, started)
    code = 0
    try:
        outs = COMMANDS[args.command](cfg, args, out)
        manifest.outputs = sorted(p.name for p in outs)
    except (CommandError, ConfigError, DatasetError, MeasurementError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        manifest.status = f"failed: {e}"
        code = 1
    manifest.duration_s = round(time.time() - t0, 3)
    manifest.write(out)
    return code


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end: plan, simulate, export-contours, verify.

Exit codes: 0 success, 2 config error, 3 infeasible plan, 4 safety
violation (or failed verification).  The REACHPLAN_THREADS environment
variable bounds the worker pool used for Monte-Carlo seed sweeps.
"""

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from .bundle import BundleError, load_bundle, read_manifest, write_bundle, write_trajectory_csv
from .config import ConfigError, load_config, parse_config
from .contour import marching_squares
from .grid import ScalarField, interpolate, project_min
from .reachability import latest_departure_time
from .sim import DisturbancePolicy, check_arrival, check_safety, simulate_fleet
from .spp import InfeasiblePlanError, plan as run_planner

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_UNSAFE = 4


def _thread_count() -> int:
    raw = os.environ.get("REACHPLAN_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return max(1, os.cpu_count() or 1)


def _load_config_with_overrides(args):
    with open(args.config, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ConfigError("config file must contain a mapping")
    if getattr(args, "method", None):
        raw["method"] = args.method
    if getattr(args, "resolution", None):
        counts = [int(c) for c in args.resolution.split(",")]
        if len(counts) == 1:
            counts = counts * len(raw["grid"]["counts"])
        raw["grid"]["counts"] = counts
    return parse_config(raw)


def cmd_plan(args) -> int:
    config = _load_config_with_overrides(args)
    out_dir = args.out or config.output_dir
    if out_dir is None:
        raise ConfigError("no output directory: set 'output_dir' or pass --out")
    rtt_kwargs = {}
    if config.method == "rtt":
        rtt_kwargs = dict(
            error_grid=config.rtt.error_grid,
            planner_v=config.rtt.planner_v,
            planner_omega_max=config.rtt.planner_omega_max,
            error_bound_radius=config.rtt.error_bound_radius,
            kernel_tol=config.rtt.kernel_tol,
            kernel_max_iters=config.rtt.kernel_max_iters,
        )
    plans = run_planner(
        config.method, config.fleet, config.grid, config.capture_radius,
        config.numerics, **rtt_kwargs,
    )
    root = write_bundle(config, plans, out_dir)
    print(f"method: {config.method}   bundle: {root}")
    print(f"{'vehicle':>7}  {'ldt':>9}")
    for plan in plans:
        print(f"{plan.vehicle.priority:>7}  {plan.ldt:>9.4f}")
    return EXIT_OK


def _run_seed(plans, mode, seed, dt, fallback, eps_cells, capture_radius):
    trajs = simulate_fleet(
        plans, DisturbancePolicy(mode, seed), dt, fallback, eps_cells
    )
    safety = check_safety(trajs, capture_radius)
    arrivals = [
        check_arrival(t, p.vehicle.target_center, p.vehicle.target_radius,
                      p.vehicle.arrival_time)
        for t, p in zip(trajs, plans)
    ]
    return trajs, safety, arrivals


def cmd_simulate(args) -> int:
    config, plans, manifest = load_bundle(args.bundle)
    sim = config.simulation
    mode = args.disturbance or sim.disturbance
    dt = args.dt or sim.dt
    seeds = args.seeds or sim.seeds
    seed0 = args.seed if args.seed is not None else 0
    out_dir = Path(args.out or Path(args.bundle) / "simulation")
    out_dir.mkdir(parents=True, exist_ok=True)

    seed_list = [seed0 + k for k in range(seeds)] if mode == "random" else [seed0]
    runner = lambda s: _run_seed(
        plans, mode, s, dt, sim.fallback, config.numerics.boundary_eps_cells,
        config.capture_radius,
    )
    if len(seed_list) > 1 and _thread_count() > 1:
        with ThreadPoolExecutor(max_workers=_thread_count()) as pool:
            results = list(pool.map(runner, seed_list))
    else:
        results = [runner(s) for s in seed_list]

    trajs0 = results[0][0]
    for traj in trajs0:
        write_trajectory_csv(traj, out_dir / f"trajectory_vehicle_{traj.priority:02d}.csv")

    per_seed = []
    all_ok = True
    for s, (_, safety, arrivals) in zip(seed_list, results):
        ok = safety.ok and all(a.arrived for a in arrivals)
        all_ok = all_ok and ok
        per_seed.append(
            {
                "seed": s,
                "min_distance": safety.min_distance,
                "violations": len(safety.violations),
                "arrivals": [
                    {"vehicle": p.vehicle.priority,
                     "arrived": a.arrived,
                     "time": a.time}
                    for p, a in zip(plans, arrivals)
                ],
            }
        )
    report = {
        "bundle": str(args.bundle),
        "config_hash": manifest["config_hash"],
        "disturbance": mode,
        "dt": dt,
        "seeds": seed_list,
        "capture_radius": config.capture_radius,
        "min_distance_matrix": results[0][1].to_dict()["min_distance_matrix"],
        "runs": per_seed,
        "ok": all_ok,
    }
    with open(out_dir / "report.json", "w") as fh:
        json.dump(report, fh, indent=2)
    worst = min(r["min_distance"] for r in per_seed)
    print(f"simulated {len(seed_list)} run(s), disturbance={mode}, "
          f"min pairwise distance {worst:.4f} (capture radius {config.capture_radius})")
    print(f"report: {out_dir / 'report.json'}")
    if not all_ok:
        print("SAFETY/ARRIVAL FAILURE: see report for details", file=sys.stderr)
        return EXIT_UNSAFE
    return EXIT_OK


def _write_contours(lines, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["polyline", "x", "y"])
        for k, line in enumerate(lines):
            for x, y in line:
                writer.writerow([k, f"{x:.9g}", f"{y:.9g}"])


def cmd_export_contours(args) -> int:
    config, plans, manifest = load_bundle(args.bundle)
    times = [float(t) for t in args.times.split(",")]
    out_dir = Path(args.out or Path(args.bundle) / "contours")
    out_dir.mkdir(parents=True, exist_ok=True)
    which = args.set
    wanted = [p for p in plans if args.vehicle is None or p.vehicle.priority == args.vehicle]
    for plan in wanted:
        for t in times:
            if which == "brs":
                series = plan.values
                if not (series.t_min - 1e-9 <= t <= series.t_max + 1e-9):
                    raise ConfigError(
                        f"time {t} outside stored span "
                        f"[{series.t_min:.4f}, {series.t_max:.4f}]"
                    )
                vals3 = series.sample(t)
                if args.project:
                    field2 = project_min(ScalarField(series.grid, vals3), (0, 1))
                    grid2, vals2 = field2.grid, field2.values
                else:
                    grid3 = series.grid
                    theta = args.theta if args.theta is not None else 0.0
                    pts_theta = np.full((grid3.counts[0], grid3.counts[1]), theta)
                    xs, ys = np.meshgrid(grid3.coords[0], grid3.coords[1], indexing="ij")
                    pts = np.stack([xs, ys, pts_theta], axis=-1)
                    vals2 = interpolate(grid3, vals3, pts)
                    grid2 = grid3.subgrid((0, 1))
                level = 0.0
            else:
                series = plan.obstacle.series
                vals2 = series.sample(t)
                grid2 = series.grid
                # obstacle snapshots are footprint SDFs minus the dilation, so
                # the undilated forward-set footprint is the contour at +dilation
                level = 0.0 if which == "obstacle" else manifest["obstacle_dilation"]
            lines = marching_squares(grid2, np.asarray(vals2), level)
            name = f"contour_{which}_v{plan.vehicle.priority:02d}_t{t:+.3f}.csv"
            _write_contours(lines, out_dir / name)
    print(f"wrote contours for {len(wanted)} vehicle(s) at {len(times)} time(s) to {out_dir}")
    return EXIT_OK


def cmd_verify(args) -> int:
    checks = []

    def check(name, ok, detail=""):
        checks.append(ok)
        print(f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else ""))

    try:
        config, plans, manifest = load_bundle(args.bundle)
        check("bundle integrity and config hash", True)
    except (BundleError, ConfigError) as exc:
        check("bundle integrity and config hash", False, str(exc))
        return EXIT_UNSAFE

    for plan in plans:
        recomputed = latest_departure_time(plan.values, plan.vehicle.x0)
        check(
            f"vehicle {plan.vehicle.priority} stored ldt consistent",
            abs(recomputed - plan.ldt) <= config.numerics.dt_out + 1e-9,
            f"manifest {plan.ldt:.4f} vs recomputed {recomputed:.4f}",
        )

    lead = plans[0].values
    mono = all(
        np.all(lead.fields[k].values >= lead.fields[k + 1].values - 1e-9)
        for k in range(len(lead.fields) - 1)
    )
    check("vehicle 1 value non-increasing backward in time", mono)

    trajs, safety, arrivals = _run_seed(
        plans, "zero", 0, config.simulation.dt, config.simulation.fallback,
        config.numerics.boundary_eps_cells, config.capture_radius,
    )
    check("zero-disturbance run: no danger-zone violations", safety.ok,
          f"min distance {safety.min_distance:.4f}")
    check("zero-disturbance run: all arrivals on time",
          all(a.arrived for a in arrivals))

    if all(checks):
        print("all checks passed")
        return EXIT_OK
    return EXIT_UNSAFE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reachplan",
        description="Reachability-based sequential multi-vehicle path planning",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="run a planner and write a plan bundle")
    p.add_argument("--config", required=True, help="scenario YAML")
    p.add_argument("--out", help="bundle output directory")
    p.add_argument("--method", choices=("cc", "lrc", "rtt"), help="override the method")
    p.add_argument("--resolution", help="override grid counts, e.g. 41 or 41,41,41")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate", help="simulate a plan bundle and check safety")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", help="where to write trajectories and the report")
    p.add_argument("--seed", type=int, help="first random seed")
    p.add_argument("--seeds", type=int, help="number of random-seed runs")
    p.add_argument("--disturbance", choices=("zero", "random", "adversarial"))
    p.add_argument("--dt", type=float, help="integration step")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("export-contours", help="write zero-level contour polylines")
    p.add_argument("--bundle", required=True)
    p.add_argument("--set", choices=("brs", "obstacle", "frs"), default="brs")
    p.add_argument("--times", required=True, help="comma-separated times")
    p.add_argument("--vehicle", type=int, help="restrict to one vehicle")
    p.add_argument("--theta", type=float, help="heading slice for 3D sets")
    p.add_argument("--project", action="store_true",
                   help="project over heading instead of slicing")
    p.add_argument("--out")
    p.set_defaults(func=cmd_export_contours)

    p = sub.add_parser("verify", help="run consistency and safety checks on a bundle")
    p.add_argument("--bundle", required=True)
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"missing file: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BundleError as exc:
        print(f"bundle error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasiblePlanError as exc:
        print(f"infeasible plan: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())

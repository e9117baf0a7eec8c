"""Plan bundles: the on-disk artifact produced by planning runs.

A bundle directory holds a manifest (method, config hash, per-vehicle
departure times and snapshot stamps), the validated config, per-vehicle
value-function and obstacle snapshots in the flat field format, and for
robust-tracking plans the nominal trajectory CSV and kernel field.
"""

import csv
import json
import math
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import yaml

from .config import ScenarioConfig, load_config
from .grid import ScalarField, TimeIndexedField, read_field, write_field
from .reachability import KernelResult
from .sim import Trajectory
from .spp import ObstacleSchedule, PlanResult
from .vehicles import ErrorModel, NominalTrajectory, OptimalPolicy, TrackingPolicy

BUNDLE_FORMAT = "reachplan-bundle/1"


class BundleError(RuntimeError):
    """The bundle is missing files or inconsistent with its manifest."""


def _vehicle_dir(root: Path, priority: int) -> Path:
    return root / f"vehicle_{priority:02d}"


def write_trajectory_csv(traj: Trajectory, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "x", "y", "theta", "v", "omega", "dx", "dy", "dtheta"])
        for k in range(len(traj.times)):
            writer.writerow(
                [f"{traj.times[k]:.9g}"]
                + [f"{v:.9g}" for v in traj.states[k]]
                + [f"{v:.9g}" for v in traj.controls[k]]
                + [f"{v:.9g}" for v in traj.disturbances[k]]
            )


def _write_nominal_csv(nominal: NominalTrajectory, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "x", "y", "theta", "v", "omega"])
        for k in range(len(nominal.times)):
            writer.writerow(
                [f"{nominal.times[k]:.9g}"]
                + [f"{v:.9g}" for v in nominal.states[k]]
                + [f"{v:.9g}" for v in nominal.controls[k]]
            )


def _read_nominal_csv(path) -> NominalTrajectory:
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return NominalTrajectory(rows[:, 0], rows[:, 1:4], rows[:, 4:6])


def write_bundle(config: ScenarioConfig, plans: list[PlanResult], out_dir) -> Path:
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "config.yaml", "w") as fh:
        yaml.safe_dump(config.canonical, fh, sort_keys=True)

    margin = config.numerics.dilation_margin_cells * max(
        config.grid.spacing[0], config.grid.spacing[1]
    )
    vehicles_meta = []
    for plan in plans:
        vdir = _vehicle_dir(root, plan.vehicle.priority)
        vdir.mkdir(exist_ok=True)
        for k, f in enumerate(plan.values.fields):
            write_field(f, vdir / f"value_{k:04d}.field")
        for k, f in enumerate(plan.obstacle.series.fields):
            write_field(f, vdir / f"obstacle_{k:04d}.field")
        meta = {
            "priority": plan.vehicle.priority,
            "ldt": plan.ldt,
            "arrival_time": plan.vehicle.arrival_time,
            "value_times": [float(t) for t in plan.values.times],
            "obstacle_times": [float(t) for t in plan.obstacle.series.times],
        }
        if plan.nominal is not None:
            _write_nominal_csv(plan.nominal, vdir / "nominal.csv")
        if plan.kernel is not None:
            write_field(plan.kernel.value, vdir / "kernel_value.field")
            meta["kernel"] = {
                "converged": plan.kernel.converged,
                "iterations": plan.kernel.iterations,
                "final_change": plan.kernel.final_change,
            }
        vehicles_meta.append(meta)

    manifest = {
        "format": BUNDLE_FORMAT,
        "method": config.method,
        "config_hash": config.config_hash,
        "created": datetime.now(timezone.utc).isoformat(),
        "capture_radius": config.capture_radius,
        "obstacle_dilation": config.capture_radius + margin,
        "pre_departure": config.numerics.pre_departure,
        "post_arrival": config.numerics.post_arrival,
        "vehicles": vehicles_meta,
    }
    with open(root / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return root


def read_manifest(root) -> dict:
    root = Path(root)
    path = root / "manifest.json"
    if not path.exists():
        raise BundleError(f"no manifest.json in {root}")
    with open(path) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != BUNDLE_FORMAT:
        raise BundleError(f"unsupported bundle format {manifest.get('format')!r}")
    return manifest


def load_bundle(root) -> tuple[ScenarioConfig, list[PlanResult], dict]:
    """Rebuild the plans (including controllers) from a bundle directory.

    Refuses to load when the bundled config no longer matches the hash the
    plan was produced under.
    """
    root = Path(root)
    manifest = read_manifest(root)
    config = load_config(root / "config.yaml")
    if config.config_hash != manifest["config_hash"]:
        raise BundleError(
            "config hash mismatch: bundle config does not match the planned one"
        )

    plans = []
    for meta, spec in zip(manifest["vehicles"], config.fleet):
        if meta["priority"] != spec.priority:
            raise BundleError("manifest vehicle order does not match the config")
        vdir = _vehicle_dir(root, spec.priority)
        value_fields = []
        for k in range(len(meta["value_times"])):
            path = vdir / f"value_{k:04d}.field"
            if not path.exists():
                raise BundleError(f"missing snapshot {path}")
            value_fields.append(read_field(path))
        values = TimeIndexedField(np.array(meta["value_times"]), value_fields)
        obstacle_fields = [
            read_field(vdir / f"obstacle_{k:04d}.field")
            for k in range(len(meta["obstacle_times"]))
        ]
        schedule = ObstacleSchedule(
            np.array(meta["obstacle_times"]),
            obstacle_fields,
            manifest["pre_departure"],
            manifest["post_arrival"],
        )

        nominal = None
        kernel = None
        if config.method == "rtt":
            nominal = _read_nominal_csv(vdir / "nominal.csv")
            kernel_value = read_field(vdir / "kernel_value.field")
            kmeta = meta.get("kernel", {})
            kernel = KernelResult(
                kernel=ScalarField(kernel_value.grid, -kernel_value.values),
                value=kernel_value,
                converged=kmeta.get("converged", True),
                iterations=kmeta.get("iterations", 0),
                final_change=kmeta.get("final_change", math.nan),
            )
            errmodel = ErrorModel(
                spec.model, config.rtt.planner_v, config.rtt.planner_omega_max,
                kernel_value.grid,
            )
            policy = TrackingPolicy(kernel_value, errmodel, nominal)
        else:
            policy = OptimalPolicy(values, spec.model)

        plans.append(
            PlanResult(
                vehicle=spec,
                values=values,
                ldt=meta["ldt"],
                obstacle=schedule,
                policy=policy,
                method=config.method,
                nominal=nominal,
                kernel=kernel,
            )
        )
    return config, plans, manifest

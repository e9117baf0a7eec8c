"""Scenario configuration: schema-validated YAML with a stable content hash."""

import hashlib
import json
from dataclasses import dataclass

import yaml

from .grid import Grid, make_grid
from .spp import METHODS, NumericsConfig, VehicleSpec
from .sim import DISTURBANCE_MODES, FALLBACK_MODES
from .vehicles import DubinsModel

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """A scenario config failed validation; the message names the key."""


def _require(mapping: dict, key: str, where: str):
    if key not in mapping:
        raise ConfigError(f"missing required key '{where}{key}'")
    return mapping[key]


def _check_keys(mapping: dict, allowed: set, where: str):
    if not isinstance(mapping, dict):
        raise ConfigError(f"'{where.rstrip('.') or 'config'}' must be a mapping")
    for key in mapping:
        if key not in allowed:
            raise ConfigError(f"unknown key '{where}{key}'")


def _number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"'{where}' must be a number")
    return float(value)


def _vector(value, n: int, where: str) -> tuple:
    if not isinstance(value, (list, tuple)) or len(value) != n:
        raise ConfigError(f"'{where}' must be a list of {n} numbers")
    return tuple(_number(v, where) for v in value)


def _parse_grid(raw: dict, where: str) -> Grid:
    _check_keys(raw, {"bounds", "counts", "periodic"}, where)
    bounds = _require(raw, "bounds", where)
    counts = _require(raw, "counts", where)
    periodic = raw.get("periodic", [False] * len(counts))
    if not isinstance(bounds, list) or any(len(b) != 2 for b in bounds):
        raise ConfigError(f"'{where}bounds' must be a list of [lo, hi] pairs")
    try:
        return make_grid(bounds, counts, periodic)
    except ValueError as exc:
        raise ConfigError(f"'{where.rstrip('.')}': {exc}") from exc


def _parse_model(raw: dict, where: str) -> DubinsModel:
    allowed = {"v_min", "v_max", "omega_max", "d_pos_max", "d_theta_max"}
    _check_keys(raw, allowed, where)
    try:
        return DubinsModel(
            v_min=_number(_require(raw, "v_min", where), where + "v_min"),
            v_max=_number(_require(raw, "v_max", where), where + "v_max"),
            omega_max=_number(_require(raw, "omega_max", where), where + "omega_max"),
            d_pos_max=_number(raw.get("d_pos_max", 0.0), where + "d_pos_max"),
            d_theta_max=_number(raw.get("d_theta_max", 0.0), where + "d_theta_max"),
        )
    except ValueError as exc:
        raise ConfigError(f"'{where.rstrip('.')}': {exc}") from exc


def _parse_numerics(raw: dict) -> NumericsConfig:
    where = "numerics."
    defaults = NumericsConfig()
    allowed = {
        "dt_out", "cfl", "scheme", "rk_order", "horizon", "boundary_eps_cells",
        "dilation_margin_cells", "seed_radius_cells", "pre_departure", "post_arrival",
    }
    _check_keys(raw, allowed, where)
    scheme = raw.get("scheme", defaults.scheme)
    if scheme not in ("upwind1", "weno5"):
        raise ConfigError(f"'{where}scheme' must be upwind1 or weno5")
    rk_order = raw.get("rk_order", defaults.rk_order)
    if rk_order not in (1, 2, 3):
        raise ConfigError(f"'{where}rk_order' must be 1, 2 or 3")
    try:
        return NumericsConfig(
            dt_out=_number(raw.get("dt_out", defaults.dt_out), where + "dt_out"),
            cfl=_number(raw.get("cfl", defaults.cfl), where + "cfl"),
            scheme=scheme,
            rk_order=int(rk_order),
            horizon=_number(raw.get("horizon", defaults.horizon), where + "horizon"),
            boundary_eps_cells=_number(
                raw.get("boundary_eps_cells", defaults.boundary_eps_cells),
                where + "boundary_eps_cells",
            ),
            dilation_margin_cells=_number(
                raw.get("dilation_margin_cells", defaults.dilation_margin_cells),
                where + "dilation_margin_cells",
            ),
            seed_radius_cells=_number(
                raw.get("seed_radius_cells", defaults.seed_radius_cells),
                where + "seed_radius_cells",
            ),
            pre_departure=raw.get("pre_departure", defaults.pre_departure),
            post_arrival=raw.get("post_arrival", defaults.post_arrival),
        )
    except ValueError as exc:
        raise ConfigError(f"'numerics': {exc}") from exc


@dataclass(frozen=True)
class RttConfig:
    planner_v: tuple[float, float]
    planner_omega_max: float
    error_bound_radius: float
    error_grid: Grid
    kernel_tol: float = 1e-3
    kernel_max_iters: int = 500


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.005
    seeds: int = 1
    disturbance: str = "random"
    fallback: str = "target"


@dataclass
class ScenarioConfig:
    method: str
    grid: Grid
    fleet: list[VehicleSpec]
    capture_radius: float
    numerics: NumericsConfig
    rtt: RttConfig | None
    simulation: SimConfig
    output_dir: str | None
    canonical: dict

    @property
    def config_hash(self) -> str:
        return hash_canonical(self.canonical)


def hash_canonical(canonical: dict) -> str:
    payload = json.dumps(canonical, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _parse_rtt(raw: dict) -> RttConfig:
    where = "rtt."
    allowed = {
        "planner_v", "planner_omega_max", "error_bound_radius", "error_grid",
        "kernel_tol", "kernel_max_iters",
    }
    _check_keys(raw, allowed, where)
    planner_v = _require(raw, "planner_v", where)
    if isinstance(planner_v, (int, float)):
        planner_v = (float(planner_v), float(planner_v))
    else:
        planner_v = _vector(planner_v, 2, where + "planner_v")
    return RttConfig(
        planner_v=planner_v,
        planner_omega_max=_number(
            _require(raw, "planner_omega_max", where), where + "planner_omega_max"
        ),
        error_bound_radius=_number(
            _require(raw, "error_bound_radius", where), where + "error_bound_radius"
        ),
        error_grid=_parse_grid(_require(raw, "error_grid", where), where + "error_grid."),
        kernel_tol=_number(raw.get("kernel_tol", 1e-3), where + "kernel_tol"),
        kernel_max_iters=int(raw.get("kernel_max_iters", 500)),
    )


def _parse_simulation(raw: dict) -> SimConfig:
    where = "simulation."
    _check_keys(raw, {"dt", "seeds", "disturbance", "fallback"}, where)
    disturbance = raw.get("disturbance", "random")
    if disturbance not in DISTURBANCE_MODES:
        raise ConfigError(f"'{where}disturbance' must be one of {DISTURBANCE_MODES}")
    fallback = raw.get("fallback", "target")
    if fallback not in FALLBACK_MODES:
        raise ConfigError(f"'{where}fallback' must be one of {FALLBACK_MODES}")
    seeds = raw.get("seeds", 1)
    if not isinstance(seeds, int) or seeds < 1:
        raise ConfigError(f"'{where}seeds' must be a positive integer")
    return SimConfig(
        dt=_number(raw.get("dt", 0.005), where + "dt"),
        seeds=seeds,
        disturbance=disturbance,
        fallback=fallback,
    )


def parse_config(raw: dict) -> ScenarioConfig:
    """Validate a raw mapping into a ScenarioConfig (unknown keys rejected)."""
    top_allowed = {
        "version", "method", "grid", "model", "vehicles", "capture_radius",
        "numerics", "rtt", "simulation", "output_dir",
    }
    _check_keys(raw, top_allowed, "")
    version = _require(raw, "version", "")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported config version {version!r} (expected {SCHEMA_VERSION})")
    method = _require(raw, "method", "")
    if method not in METHODS:
        raise ConfigError(f"'method' must be one of {METHODS}")

    grid = _parse_grid(_require(raw, "grid", ""), "grid.")
    if grid.ndim != 3 or not grid.periodic[2] or grid.periodic[0] or grid.periodic[1]:
        raise ConfigError("'grid' must be 3D (x, y, heading) with only the heading periodic")

    default_model = _parse_model(_require(raw, "model", ""), "model.")

    vehicles_raw = _require(raw, "vehicles", "")
    if not isinstance(vehicles_raw, list) or not vehicles_raw:
        raise ConfigError("'vehicles' must be a nonempty list")
    fleet = []
    for k, v in enumerate(vehicles_raw):
        where = f"vehicles[{k}]."
        _check_keys(v, {"start", "target_center", "target_radius", "arrival_time", "model"}, where)
        model = _parse_model(v["model"], where + "model.") if "model" in v else default_model
        try:
            fleet.append(
                VehicleSpec(
                    model=model,
                    x0=_vector(_require(v, "start", where), 3, where + "start"),
                    target_center=_vector(
                        _require(v, "target_center", where), 2, where + "target_center"
                    ),
                    target_radius=_number(
                        _require(v, "target_radius", where), where + "target_radius"
                    ),
                    arrival_time=_number(v.get("arrival_time", 0.0), where + "arrival_time"),
                    priority=k + 1,
                )
            )
        except ValueError as exc:
            raise ConfigError(f"'vehicles[{k}]': {exc}") from exc

    capture_radius = _number(_require(raw, "capture_radius", ""), "capture_radius")
    if capture_radius <= 0:
        raise ConfigError("'capture_radius' must be positive")

    numerics = _parse_numerics(raw.get("numerics", {}))

    rtt = None
    if method == "rtt":
        rtt = _parse_rtt(_require(raw, "rtt", ""))
    elif "rtt" in raw:
        rtt = _parse_rtt(raw["rtt"])

    simulation = _parse_simulation(raw.get("simulation", {}))

    canonical = json.loads(json.dumps(raw, sort_keys=True))
    return ScenarioConfig(
        method=method,
        grid=grid,
        fleet=fleet,
        capture_radius=capture_radius,
        numerics=numerics,
        rtt=rtt,
        simulation=simulation,
        output_dir=raw.get("output_dir"),
        canonical=canonical,
    )


def load_config(path) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ConfigError("config file must contain a mapping")
    return parse_config(raw)

"""Sequential priority-ordered path planning with induced obstacles.

Vehicles plan one at a time in priority order.  Each planned vehicle leaves
behind a time-indexed obstacle describing where it might be (dilated by the
capture radius), built per method:

* centralized control: forward reachable set of the closed-loop optimal
  dynamics under disturbances;
* least restrictive control: forward reachable set under free inputs,
  intersected with the backward reachable set of the target;
* robust trajectory tracking: the tracking-error kernel translated along a
  disturbance-free nominal trajectory, with targets shrunk and obstacles
  augmented by the kernel so error tubes can never overlap.
"""

import math
from dataclasses import dataclass

import numpy as np

from .grid import (
    LARGE,
    Grid,
    ScalarField,
    TimeIndexedField,
    field_complement,
    project_min,
    dilate,
    minkowski_sum_translate,
    reinitialize,
    signed_distance_ball,
)
from .reachability import (
    BrsProblem,
    FrsProblem,
    KernelResult,
    UnreachableError,
    converge_invariant_kernel,
    latest_departure_time,
    solve_brs,
    solve_frs,
)
from .vehicles import (
    DubinsModel,
    ErrorModel,
    NominalTrajectory,
    OptimalPolicy,
    TrackingPolicy,
    brs_hamiltonian,
    closed_loop_frs_hamiltonian,
    error_hamiltonian,
    frs_hamiltonian,
)

METHODS = ("cc", "lrc", "rtt")


class InfeasiblePlanError(RuntimeError):
    """A vehicle cannot reach its target within the planning horizon."""

    def __init__(self, priority: int, message: str):
        super().__init__(f"vehicle {priority}: {message}")
        self.priority = priority


@dataclass(frozen=True)
class VehicleSpec:
    model: DubinsModel
    x0: tuple[float, float, float]
    target_center: tuple[float, float]
    target_radius: float
    arrival_time: float = 0.0
    priority: int = 1

    def __post_init__(self):
        if self.target_radius <= 0:
            raise ValueError("target radius must be positive")


@dataclass(frozen=True)
class NumericsConfig:
    dt_out: float = 0.01
    cfl: float = 0.5
    scheme: str = "upwind1"
    rk_order: int = 1
    horizon: float = 5.0
    boundary_eps_cells: float = 1.5
    dilation_margin_cells: float = 1.0
    seed_radius_cells: float = 1.5
    frs_theta_refine: int = 3  # heading-axis refinement for closed-loop forward sets
    obstacle_dt: float | None = None  # induced-obstacle cadence; default dt_out / 4
    pre_departure: str = "hold-initial"  # obstacle before the owner departs
    post_arrival: str = "remove"  # obstacle after the owner's arrival time

    def __post_init__(self):
        if self.pre_departure not in ("hold-initial", "none"):
            raise ValueError(f"unknown pre_departure mode {self.pre_departure!r}")
        if self.post_arrival not in ("remove", "hold-last"):
            raise ValueError(f"unknown post_arrival mode {self.post_arrival!r}")

    @property
    def obstacle_cadence(self) -> float:
        # a moving obstacle sampled too coarsely in time smears across the
        # narrow space-time windows where vehicles pass each other
        return self.obstacle_dt if self.obstacle_dt is not None else self.dt_out / 4


@dataclass
class PlanResult:
    vehicle: VehicleSpec
    values: TimeIndexedField
    ldt: float
    obstacle: "ObstacleSchedule"
    policy: object
    method: str
    nominal: NominalTrajectory | None = None
    kernel: KernelResult | None = None


class ObstacleSchedule:
    """Position-plane obstacle snapshots plus out-of-range semantics.

    Before its first stamp the obstacle is either held at the initial
    snapshot (owner waiting at its start) or absent; after its last stamp
    it is removed (owner has arrived) or held.
    """

    def __init__(self, times, fields2d, pre: str = "hold-initial", post: str = "remove"):
        self.series = TimeIndexedField(times, fields2d)
        self.grid = self.series.grid
        self.pre = pre
        self.post = post
        self._absent = np.full(self.grid.shape, LARGE)

    def sample(self, t: float) -> np.ndarray:
        if t < self.series.t_min - 1e-12 and self.pre == "none":
            return self._absent
        if t > self.series.t_max + 1e-12 and self.post == "remove":
            return self._absent
        return self.series.sample(t)

    def covers(self, t0: float, t1: float) -> bool:
        return True

    def shifted(self, delta: float) -> "ShiftedObstacle":
        return ShiftedObstacle(self, delta)


class ShiftedObstacle:
    """A schedule grown by ``delta`` (valid because snapshots are SDF-based)."""

    def __init__(self, base, delta: float):
        self.base = base
        self.delta = delta
        self.grid = base.grid

    def sample(self, t: float) -> np.ndarray:
        return self.base.sample(t) - self.delta

    def covers(self, t0: float, t1: float) -> bool:
        return self.base.covers(t0, t1)


class UnionObstacle:
    """Pointwise union (minimum) of obstacle samplers on one grid."""

    def __init__(self, parts):
        parts = list(parts)
        if not parts:
            raise ValueError("empty obstacle union")
        self.parts = parts
        self.grid = parts[0].grid
        for p in parts:
            if p.grid != self.grid:
                raise ValueError("obstacle parts live on different grids")

    def sample(self, t: float) -> np.ndarray:
        out = self.parts[0].sample(t)
        for p in self.parts[1:]:
            out = np.minimum(out, p.sample(t))
        return out

    def covers(self, t0: float, t1: float) -> bool:
        return all(p.covers(t0, t1) for p in self.parts)


def target_field(grid: Grid, spec: VehicleSpec) -> ScalarField:
    """Implicit surface of the (position-circular) target set."""
    return signed_distance_ball(grid, spec.target_center, spec.target_radius, dims=(0, 1))


def seed_field(grid: Grid, x0, cells: float = 1.5, radius: float | None = None) -> ScalarField:
    """Small region around a state, for growing forward sets.

    A ball of radius ``cells`` * max(grid spacing) in all state dimensions
    (periodic dimensions measured with wrap-around): the smallest region
    that stays resolved while being transported across the grid.
    """
    x0 = np.asarray(x0, dtype=float)
    if radius is None:
        radius = cells * max(grid.spacing)
    mesh = grid.mesh()
    sq = np.zeros(grid.shape)
    for d in range(grid.ndim):
        delta = mesh[d] - x0[d]
        if grid.periodic[d]:
            period = grid.hi[d] - grid.lo[d]
            delta = (delta + period / 2) % period - period / 2
        sq = sq + delta**2
    return ScalarField(grid, np.sqrt(sq) - radius)


def _theta_refined(grid: Grid, factor: int) -> Grid:
    if factor <= 1:
        return grid
    counts = (grid.counts[0], grid.counts[1], grid.counts[2] * factor)
    return Grid(grid.lo, grid.hi, counts, grid.periodic)


def _heading_keepalive(values: np.ndarray, min_cells: float = 4.0) -> np.ndarray:
    """One-cell heading dilation, applied only while the set is thin.

    Keeps the average heading thickness of the occupied columns near
    ``min_cells`` so feedback contraction cannot collapse the sublevel set,
    without fanning the footprint out once it is safely resolved.
    """
    neg = values <= 0.0
    columns = neg.any(axis=2)
    if not columns.any():
        return values
    thickness = neg.sum() / columns.sum()
    if thickness >= min_cells:
        return values
    return np.minimum(
        values, np.minimum(np.roll(values, 1, axis=2), np.roll(values, -1, axis=2))
    )


def kernel_position_radius(kernel: ScalarField) -> float:
    """Largest position-norm among nodes inside the kernel."""
    inside = kernel.values <= 0.0
    if not inside.any():
        return 0.0
    ex, ey = np.meshgrid(kernel.grid.coords[0], kernel.grid.coords[1], indexing="ij")
    r = np.hypot(ex, ey)
    if kernel.grid.ndim == 3:
        r = r[:, :, None]
        r = np.broadcast_to(r, kernel.grid.shape)
    return float(r[inside].max())


def _snap_down(t: float, anchor: float, dt_out: float) -> float:
    """Largest lattice time anchor - k*dt_out that is <= t."""
    k = math.ceil((anchor - t) / dt_out - 1e-9)
    return anchor - k * dt_out


def induced_obstacle_cc(frs: TimeIndexedField, capture_radius: float, margin: float = 0.0) -> TimeIndexedField:
    """Project each forward-set snapshot to the position plane and dilate."""
    fields = [
        dilate(project_min(f, (0, 1)), capture_radius + margin) for f in frs.fields
    ]
    return TimeIndexedField(frs.times, fields)


def induced_obstacle_lrc(
    frs: TimeIndexedField,
    brs: TimeIndexedField,
    capture_radius: float,
    margin: float = 0.0,
) -> TimeIndexedField:
    """As centralized, but the set is FRS(t) intersected with BRS(t)."""
    fields = []
    for t, f in zip(frs.times, frs.fields):
        both = ScalarField(f.grid, np.maximum(f.values, brs.sample(t)))
        fields.append(dilate(project_min(both, (0, 1)), capture_radius + margin))
    return TimeIndexedField(frs.times, fields)


def induced_obstacle_rtt(
    kernel_pos_sd: ScalarField,
    nominal: NominalTrajectory,
    times,
    grid2d: Grid,
    capture_radius: float,
    margin: float = 0.0,
) -> TimeIndexedField:
    """Kernel footprint carried along the nominal, grown by the capture radius."""
    fields = []
    for t in times:
        placed = minkowski_sum_translate(kernel_pos_sd, nominal.state(t), grid2d)
        fields.append(ScalarField(grid2d, placed.values - (capture_radius + margin)))
    return TimeIndexedField(np.asarray(times, dtype=float), fields)


def induced_obstacle(method: str, capture_radius: float, *, frs=None, brs=None,
                     kernel=None, nominal=None, times=None, grid2d=None,
                     margin: float = 0.0) -> TimeIndexedField:
    """Dispatch to the per-method induced-obstacle construction."""
    if method == "cc":
        return induced_obstacle_cc(frs, capture_radius, margin)
    if method == "lrc":
        return induced_obstacle_lrc(frs, brs, capture_radius, margin)
    if method == "rtt":
        kernel_pos = kernel
        if kernel_pos.grid.ndim > 2:
            kernel_pos = reinitialize(project_min(kernel_pos, (0, 1)))
        return induced_obstacle_rtt(kernel_pos, nominal, times, grid2d, capture_radius, margin)
    raise ValueError(f"unknown method {method!r}")


def _validate_fleet(fleet):
    priorities = [s.priority for s in fleet]
    if sorted(priorities) != list(range(1, len(fleet) + 1)):
        raise ValueError("priorities must be unique and contiguous from 1")
    return sorted(fleet, key=lambda s: s.priority)


def _solve_vehicle_brs(spec, grid, target, ham, obstacle, numerics):
    problem = BrsProblem(
        target=target,
        hamiltonian=ham,
        arrival_time=spec.arrival_time,
        t_min=spec.arrival_time - numerics.horizon,
        obstacle=obstacle,
    )
    values = solve_brs(
        problem,
        numerics.dt_out,
        scheme=numerics.scheme,
        rk_order=numerics.rk_order,
        cfl_max=numerics.cfl,
        stop_state=np.asarray(spec.x0, dtype=float),
    )
    try:
        ldt = latest_departure_time(values, spec.x0)
    except UnreachableError as exc:
        raise InfeasiblePlanError(spec.priority, str(exc)) from exc
    return values, ldt


def _margin(grid: Grid, numerics: NumericsConfig) -> float:
    return numerics.dilation_margin_cells * max(grid.spacing[0], grid.spacing[1])


def _seed_radius(grid: Grid, numerics: NumericsConfig) -> float:
    # sized by the position spacing: the heading extent is kept alive
    # separately, and a heading-spacing-sized ball swallows neighbor targets
    return numerics.seed_radius_cells * max(grid.spacing[0], grid.spacing[1])


def plan_centralized(fleet, grid: Grid, capture_radius: float,
                     numerics: NumericsConfig = NumericsConfig()) -> list[PlanResult]:
    """Plan assuming every vehicle's optimal feedback law is enforced."""
    fleet = _validate_fleet(fleet)
    margin = _margin(grid, numerics)
    results: list[PlanResult] = []
    for spec in fleet:
        obstacle = UnionObstacle([r.obstacle for r in results]) if results else None
        ham = brs_hamiltonian(spec.model, grid)
        values, ldt = _solve_vehicle_brs(
            spec, grid, target_field(grid, spec), ham, obstacle, numerics
        )
        policy = OptimalPolicy(values, spec.model)
        dt_obs = numerics.obstacle_cadence
        t_start = _snap_down(ldt, spec.arrival_time, dt_obs)
        # The optimal feedback collapses heading spread onto a zero-thickness
        # manifold, which no sublevel set can represent: refine the heading
        # axis and re-thicken it by one cell whenever it runs thin.  The
        # projected position footprint (all the obstacle uses) is invariant
        # to heading dilation at each instant, so the thickening only adds
        # conservatism.
        fine = _theta_refined(grid, numerics.frs_theta_refine)
        times, fields = [], []

        def collect(t, w3):
            times.append(t)
            fields.append(
                dilate(ScalarField(grid2d, w3.min(axis=2)), capture_radius + margin)
            )

        grid2d = grid.subgrid((0, 1))
        solve_frs(
            FrsProblem(
                seed=seed_field(fine, spec.x0, radius=_seed_radius(grid, numerics)),
                hamiltonian=closed_loop_frs_hamiltonian(policy, fine),
                start_time=t_start,
                end_time=spec.arrival_time,
            ),
            dt_obs,
            scheme=numerics.scheme,
            rk_order=numerics.rk_order,
            cfl_max=numerics.cfl,
            post_snapshot=_heading_keepalive,
            snapshot_callback=collect,
            keep_snapshots=False,
        )
        schedule = ObstacleSchedule(
            np.array(times), fields, numerics.pre_departure, numerics.post_arrival
        )
        results.append(PlanResult(spec, values, ldt, schedule, policy, "cc"))
    return results


def plan_least_restrictive(fleet, grid: Grid, capture_radius: float,
                           numerics: NumericsConfig = NumericsConfig()) -> list[PlanResult]:
    """Plan assuming higher-priority vehicles only honor their arrival deadline."""
    fleet = _validate_fleet(fleet)
    margin = _margin(grid, numerics)
    results: list[PlanResult] = []
    for spec in fleet:
        obstacle = UnionObstacle([r.obstacle for r in results]) if results else None
        ham = brs_hamiltonian(spec.model, grid)
        values, ldt = _solve_vehicle_brs(
            spec, grid, target_field(grid, spec), ham, obstacle, numerics
        )
        policy = OptimalPolicy(values, spec.model)
        dt_obs = numerics.obstacle_cadence
        t_start = _snap_down(ldt, spec.arrival_time, dt_obs)
        grid2d = grid.subgrid((0, 1))
        times, fields = [], []

        def collect(t, w3):
            both = np.maximum(w3, values.sample(t))
            times.append(t)
            fields.append(
                dilate(ScalarField(grid2d, both.min(axis=2)), capture_radius + margin)
            )

        solve_frs(
            FrsProblem(
                seed=seed_field(grid, spec.x0, radius=_seed_radius(grid, numerics)),
                hamiltonian=frs_hamiltonian(spec.model, grid),
                start_time=t_start,
                end_time=spec.arrival_time,
            ),
            dt_obs,
            scheme=numerics.scheme,
            rk_order=numerics.rk_order,
            cfl_max=numerics.cfl,
            snapshot_callback=collect,
            keep_snapshots=False,
        )
        schedule = ObstacleSchedule(
            np.array(times), fields, numerics.pre_departure, numerics.post_arrival
        )
        results.append(PlanResult(spec, values, ldt, schedule, policy, "lrc"))
    return results


def tracking_kernel(errmodel: ErrorModel, error_bound_radius: float, *,
                    tol: float = 1e-3, max_iters: int = 500, dt_out: float = 0.05,
                    scheme: str = "upwind1", rk_order: int = 1,
                    cfl_max: float = 0.5) -> KernelResult:
    """Invariant kernel of the tracking-error game for a position error bound."""
    bound = signed_distance_ball(errmodel.grid, (0.0, 0.0), error_bound_radius, dims=(0, 1))
    return converge_invariant_kernel(
        field_complement(bound),
        error_hamiltonian(errmodel),
        tol=tol,
        max_iters=max_iters,
        dt_out=dt_out,
        scheme=scheme,
        rk_order=rk_order,
        cfl_max=cfl_max,
    )


def _integrate_nominal(policy: OptimalPolicy, model: DubinsModel, x0, t0: float,
                       t1: float, dt: float) -> NominalTrajectory:
    """RK4 roll-out of the disturbance-free optimal closed loop."""
    n = max(1, int(round((t1 - t0) / dt)))
    times = t0 + (t1 - t0) * np.arange(n + 1) / n
    h = (t1 - t0) / n
    x = np.asarray(x0, dtype=float).copy()
    states = [x.copy()]
    controls = []

    def f(t, x, u):
        return np.array([u[0] * math.cos(x[2]), u[0] * math.sin(x[2]), u[1]])

    for k in range(n):
        t = times[k]
        u = np.clip(
            policy.control(t, x),
            [model.v_min, -model.omega_max],
            [model.v_max, model.omega_max],
        )
        k1 = f(t, x, u)
        k2 = f(t + h / 2, x + h / 2 * k1, u)
        k3 = f(t + h / 2, x + h / 2 * k2, u)
        k4 = f(t + h, x + h * k3, u)
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        x[2] %= 2 * math.pi
        states.append(x.copy())
        controls.append(u)
    controls.append(controls[-1])
    return NominalTrajectory(times, np.array(states), np.array(controls))


def plan_robust_tracking(fleet, grid: Grid, capture_radius: float,
                         error_grid: Grid, planner_v: tuple[float, float],
                         planner_omega_max: float, error_bound_radius: float,
                         numerics: NumericsConfig = NumericsConfig(),
                         kernel_tol: float = 1e-3, kernel_max_iters: int = 500,
                         ) -> list[PlanResult]:
    """Plan nominal trajectories that every vehicle tracks within its kernel."""
    fleet = _validate_fleet(fleet)
    grid2d = grid.subgrid((0, 1))
    margin = _margin(grid, numerics)

    kernels: dict[DubinsModel, tuple] = {}

    def kernel_for(model: DubinsModel):
        if model not in kernels:
            em = ErrorModel(model, planner_v, planner_omega_max, error_grid)
            result = tracking_kernel(
                em, error_bound_radius,
                tol=kernel_tol, max_iters=kernel_max_iters, dt_out=numerics.dt_out,
                scheme=numerics.scheme, rk_order=numerics.rk_order, cfl_max=numerics.cfl,
            )
            if result.empty:
                raise InfeasiblePlanError(
                    0, "tracking-error kernel is empty; increase the error bound "
                    "or the tracker's control margin"
                )
            pos_sd = reinitialize(project_min(result.kernel, (0, 1)))
            kernels[model] = (result, pos_sd, kernel_position_radius(result.kernel), em)
        return kernels[model]

    results: list[PlanResult] = []
    for spec in fleet:
        kernel, kernel_pos_sd, k_radius, errmodel = kernel_for(spec.model)
        if k_radius >= spec.target_radius:
            raise InfeasiblePlanError(
                spec.priority,
                f"kernel radius {k_radius:.4f} leaves no room inside the "
                f"target (radius {spec.target_radius})",
            )
        shrunk = signed_distance_ball(
            grid, spec.target_center, spec.target_radius - k_radius, dims=(0, 1)
        )
        # own-kernel augmentation: grow every upstream obstacle by this
        # vehicle's kernel radius so the two error tubes cannot meet
        obstacle = (
            UnionObstacle([r.obstacle.shifted(k_radius) for r in results])
            if results
            else None
        )
        planner_model = errmodel.planner_model()
        ham = brs_hamiltonian(planner_model, grid)
        values, ldt = _solve_vehicle_brs(spec, grid, shrunk, ham, obstacle, numerics)
        nominal_policy = OptimalPolicy(values, planner_model)
        nominal = _integrate_nominal(
            nominal_policy, planner_model, spec.x0, ldt, spec.arrival_time, numerics.dt_out
        )
        dt_obs = numerics.obstacle_cadence
        t_start = _snap_down(ldt, spec.arrival_time, dt_obs)
        times = _obstacle_times(t_start, spec.arrival_time, dt_obs)
        induced = induced_obstacle_rtt(
            kernel_pos_sd, nominal, times, grid2d, capture_radius, margin
        )
        schedule = ObstacleSchedule(
            induced.times, induced.fields, numerics.pre_departure, numerics.post_arrival
        )
        policy = TrackingPolicy(kernel.value, errmodel, nominal)
        results.append(
            PlanResult(spec, values, ldt, schedule, policy, "rtt", nominal, kernel)
        )
    return results


def _obstacle_times(t0: float, t1: float, dt_out: float) -> np.ndarray:
    n = max(1, int(round((t1 - t0) / dt_out)))
    return t0 + (t1 - t0) * np.arange(n + 1) / n


def plan(method: str, fleet, grid: Grid, capture_radius: float,
         numerics: NumericsConfig = NumericsConfig(), **rtt_kwargs) -> list[PlanResult]:
    """Run the planner selected by ``method`` ('cc', 'lrc', or 'rtt')."""
    if method == "cc":
        return plan_centralized(fleet, grid, capture_radius, numerics)
    if method == "lrc":
        return plan_least_restrictive(fleet, grid, capture_radius, numerics)
    if method == "rtt":
        return plan_robust_tracking(fleet, grid, capture_radius, numerics=numerics, **rtt_kwargs)
    raise ValueError(f"unknown method {method!r}")

"""Time-dependent backward/forward reachable set solvers.

The backward solver marches the double-obstacle variational inequality

    max{ min{ D_t V + H(t, x, D_x V), l(x) - V }, -g(t, x) - V } = 0
    V(sta, x) = max{ l(x), -g(sta, x) }

from the arrival time toward earlier times: after every internal step the
value is clamped to  V <- max(min(V, l), -g(t)).  The zero sublevel set of
V(t, .) is the set of states that can still reach the target by sta while
staying clear of the obstacle.  The forward solver grows an initial set
under  D_t W + H = 0  with no clamping.
"""

import math
from dataclasses import dataclass

import numpy as np

from .grid import (
    Grid,
    ScalarField,
    TimeIndexedField,
    broadcast_position_field,
    field_complement,
    interpolate,
)
from .levelset import CFL_MAX_DEFAULT, Hamiltonian, cfl_timestep, tvd_rk_step


class UnreachableError(RuntimeError):
    """The queried state never enters the computed reachable set."""


@dataclass
class BrsProblem:
    """Backward reach problem: target ``l``, optional obstacle ``g(t)``."""

    target: ScalarField
    hamiltonian: Hamiltonian
    arrival_time: float
    t_min: float
    obstacle: object | None = None  # needs .grid, .sample(t), .covers(t0, t1)

    def __post_init__(self):
        if not self.arrival_time > self.t_min:
            raise ValueError("arrival_time must exceed t_min")
        if self.obstacle is not None and not self.obstacle.covers(self.t_min, self.arrival_time):
            raise ValueError("obstacle sequence does not cover [t_min, arrival_time]")


@dataclass
class FrsProblem:
    """Forward reach problem growing ``seed`` from start_time to end_time."""

    seed: ScalarField
    hamiltonian: Hamiltonian
    start_time: float
    end_time: float

    def __post_init__(self):
        if not self.end_time > self.start_time:
            raise ValueError("end_time must exceed start_time")


@dataclass
class KernelResult:
    """Converged infinite-horizon invariant set of the error dynamics."""

    kernel: ScalarField  # negative inside the invariant set
    value: ScalarField  # converged avoid-value function (= -kernel)
    converged: bool
    iterations: int
    final_change: float

    @property
    def empty(self) -> bool:
        return not (self.kernel.values <= 0.0).any()


def _snapshot_times(t_start: float, t_end: float, dt_out: float) -> np.ndarray:
    """Snapshot lattice anchored so both endpoints are hit exactly."""
    n = int(math.floor((t_end - t_start) / dt_out + 1e-9))
    times = t_end - dt_out * np.arange(n, -1, -1)
    if times[0] - t_start > 1e-9 * max(1.0, abs(t_end)):
        times = np.concatenate([[t_start], times])
    else:
        times[0] = t_start
    return times


def apply_vi_clamp(values: np.ndarray, target_values: np.ndarray,
                   neg_obstacle_values: np.ndarray | None = None) -> np.ndarray:
    """The variational-inequality projection: freeze onto the target's
    sublevel set, then carve out the obstacle (obstacle wins)."""
    out = np.minimum(values, target_values)
    if neg_obstacle_values is not None:
        out = np.maximum(out, neg_obstacle_values)
    return out


def _neg_obstacle_values(obstacle, grid: Grid, t: float, cap_cells: float = 2.0) -> np.ndarray:
    """-g with the inside depth capped a couple of cells high.

    Any implicit surface with the same sign pattern represents the same
    obstacle set; a bounded dome keeps the clamp from radiating large
    positive values into the reach front through the scheme's dissipation.
    """
    vals = obstacle.sample(t)
    if obstacle.grid != grid:
        vals = broadcast_position_field(ScalarField(obstacle.grid, vals), grid)
    cap = cap_cells * max(obstacle.grid.spacing)
    return np.minimum(-vals, cap)


def _march(grid, values, ham, t_from, t_to, *, scheme, rk_order, cfl_max, clamp):
    """Advance from physical time t_from to t_to (either direction)."""
    span = t_to - t_from
    direction = 1.0 if span > 0 else -1.0
    if direction > 0:
        ham_eff = ham
    else:
        # Backward march: integrate in s = -t, where the PDE reads
        # D_s V - H(-s, x, D_x V) = 0.
        advection = None
        if ham.advection is not None:
            advection = lambda s, c: tuple(-ck for ck in ham.advection(-s, c))
        ham_eff = Hamiltonian(
            fn=lambda s, c, lam: -ham.fn(-s, c, lam),
            alpha=ham.alpha,
            advection=advection,
            advection_bound=ham.advection_bound,
        )
    dt_stable = cfl_timestep(grid, ham_eff, cfl_max)
    n_sub = max(1, int(math.ceil(abs(span) / dt_stable - 1e-12)))
    dt_sub = abs(span) / n_sub
    s = t_from * direction
    for _ in range(n_sub):
        values = tvd_rk_step(grid, values, ham_eff, s, dt_sub, rk_order, scheme, cfl_max)
        s += dt_sub
        if clamp is not None:
            values = clamp(values, s * direction)
    return values


def solve_brs(
    problem: BrsProblem,
    dt_out: float,
    *,
    scheme: str = "upwind1",
    rk_order: int = 1,
    cfl_max: float = CFL_MAX_DEFAULT,
    stop_state=None,
    stop_margin: int = 2,
) -> TimeIndexedField:
    """March the backward reach VI from arrival_time down to t_min.

    Snapshots are recorded every ``dt_out``.  When ``stop_state`` is given,
    marching halts ``stop_margin`` snapshots after the interpolated value at
    that state first drops to zero (enough to bracket the crossing).
    """
    grid = problem.target.grid
    l_vals = problem.target.values
    ham = problem.hamiltonian

    def clamp(values, t):
        neg_g = None
        if problem.obstacle is not None:
            neg_g = _neg_obstacle_values(problem.obstacle, grid, t)
        return apply_vi_clamp(values, l_vals, neg_g)

    sta = problem.arrival_time
    v = l_vals.copy()
    if problem.obstacle is not None:
        v = np.maximum(v, _neg_obstacle_values(problem.obstacle, grid, sta))

    times_desc = _snapshot_times(problem.t_min, sta, dt_out)[::-1]
    snapshots = [ScalarField(grid, v)]
    countdown = None
    if stop_state is not None and interpolate(grid, v, stop_state) <= 0.0:
        countdown = stop_margin
    kept = 1
    for k in range(1, len(times_desc)):
        if countdown is not None and countdown <= 0:
            break
        v = _march(
            grid, v, ham, times_desc[k - 1], times_desc[k],
            scheme=scheme, rk_order=rk_order, cfl_max=cfl_max, clamp=clamp,
        )
        snapshots.append(ScalarField(grid, v))
        kept += 1
        if stop_state is not None:
            if countdown is not None:
                countdown -= 1
            elif interpolate(grid, v, stop_state) <= 0.0:
                countdown = stop_margin
    times = times_desc[:kept][::-1]
    return TimeIndexedField(times, snapshots[::-1])


def solve_frs(
    problem: FrsProblem,
    dt_out: float,
    *,
    scheme: str = "upwind1",
    rk_order: int = 1,
    cfl_max: float = CFL_MAX_DEFAULT,
    post_snapshot=None,
    snapshot_callback=None,
    keep_snapshots: bool = True,
) -> TimeIndexedField:
    """March the forward reach PDE from start_time up to end_time.

    ``post_snapshot`` (values -> values), when given, is applied at every
    snapshot; callers use it to keep dimensions that the dynamics genuinely
    collapse (e.g. feedback-contracted heading spread) representable.
    ``snapshot_callback(t, values)`` streams snapshots to the caller;
    with ``keep_snapshots=False`` only the final snapshot is retained
    (large forward sets can then be consumed without storing the history).
    """
    grid = problem.seed.grid
    times = _snapshot_times(problem.start_time, problem.end_time, dt_out)
    v = problem.seed.values.copy()
    if snapshot_callback is not None:
        snapshot_callback(float(times[0]), v)
    snapshots = [problem.seed]
    for k in range(1, len(times)):
        v = _march(
            grid, v, problem.hamiltonian, times[k - 1], times[k],
            scheme=scheme, rk_order=rk_order, cfl_max=cfl_max, clamp=None,
        )
        if post_snapshot is not None:
            v = post_snapshot(v)
        if snapshot_callback is not None:
            snapshot_callback(float(times[k]), v)
        if keep_snapshots:
            snapshots.append(ScalarField(grid, v))
    if not keep_snapshots:
        return TimeIndexedField(times[-1:], [ScalarField(grid, v)])
    return TimeIndexedField(times, snapshots)


def converge_invariant_kernel(
    target_complement: ScalarField,
    hamiltonian: Hamiltonian,
    *,
    tol: float = 1e-3,
    max_iters: int = 500,
    dt_out: float = 0.05,
    scheme: str = "upwind1",
    rk_order: int = 1,
    cfl_max: float = CFL_MAX_DEFAULT,
) -> KernelResult:
    """Infinite-horizon avoid kernel of the tracking-error game.

    Marches the backward reach VI whose target is the *complement* of the
    error bound until the value stops changing (sup-norm between successive
    snapshots < tol) or ``max_iters`` snapshots have been taken, then returns
    the complement of the converged set: the region the tracker can hold
    forever.  Non-convergence is reported via the ``converged`` flag.
    """
    grid = target_complement.grid
    l_vals = target_complement.values

    def clamp(values, t):
        return np.minimum(values, l_vals)

    v = l_vals.copy()
    change = np.inf
    iters = 0
    t = 0.0
    while iters < max_iters:
        v_new = _march(
            grid, v, hamiltonian, t, t - dt_out,
            scheme=scheme, rk_order=rk_order, cfl_max=cfl_max, clamp=clamp,
        )
        change = float(np.max(np.abs(v_new - v)))
        v = v_new
        t -= dt_out
        iters += 1
        if change < tol:
            break
    value = ScalarField(grid, v)
    return KernelResult(
        kernel=field_complement(value),
        value=value,
        converged=change < tol,
        iterations=iters,
        final_change=change,
    )


def latest_departure_time(values: TimeIndexedField, x0) -> float:
    """Largest time at which x0 still lies in the zero sublevel set.

    Linear interpolation in t between the bracketing snapshots; raises
    UnreachableError when x0 is outside the set at every stored time.
    """
    x0 = np.asarray(x0, dtype=float)
    at_x0 = np.array(
        [interpolate(values.grid, f.values, x0) for f in values.fields]
    )
    inside = at_x0 <= 0.0
    if not inside.any():
        raise UnreachableError("state never enters the computed reachable set")
    k = int(np.max(np.nonzero(inside)[0]))
    if k == len(values.fields) - 1:
        return values.t_max
    t0, t1 = values.times[k], values.times[k + 1]
    v0, v1 = at_x0[k], at_x0[k + 1]
    if v1 <= v0:  # non-monotone wiggle; stay conservative
        return float(t0)
    return float(t0 + (t1 - t0) * (0.0 - v0) / (v1 - v0))

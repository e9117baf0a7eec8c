"""Closed-loop fleet simulation and safety/arrival verification.

All vehicles are integrated on one common clock so pairwise distances are
well defined at every stamp.  A vehicle waits parked at its start until its
departure time, then flies its method's controller (optimal feedback, least
restrictive law with a configurable fallback, or the tracking law against
its nominal trajectory) under the selected disturbance policy.
"""

import math
from dataclasses import dataclass

import numpy as np

from .spp import PlanResult
from .vehicles import DubinsModel, LeastRestrictivePolicy, OptimalPolicy, TrackingPolicy

DT_DEFAULT = 0.005

DISTURBANCE_MODES = ("zero", "random", "adversarial")
FALLBACK_MODES = ("target", "turn-left")


@dataclass(frozen=True)
class DisturbancePolicy:
    """How the realized disturbance is drawn at each integration step."""

    mode: str = "zero"
    seed: int | None = None

    def __post_init__(self):
        if self.mode not in DISTURBANCE_MODES:
            raise ValueError(f"unknown disturbance mode {self.mode!r}")


@dataclass
class Trajectory:
    """Common-clock record of one vehicle's simulated flight.

    Control/disturbance row k is the input held over [times[k], times[k+1]);
    rows before departure and the final row are NaN.
    """

    priority: int
    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    disturbances: np.ndarray
    departure_time: float

    def positions(self) -> np.ndarray:
        return self.states[:, :2]

    def flying(self) -> np.ndarray:
        """Mask of steps at which a control was actually applied."""
        return ~np.isnan(self.controls[:, 0])


@dataclass
class ArrivalResult:
    arrived: bool
    time: float | None


@dataclass
class SafetyReport:
    capture_radius: float
    min_distance: float
    min_distance_matrix: np.ndarray
    violations: list  # (priority_i, priority_j, time, distance)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "capture_radius": self.capture_radius,
            "min_distance": self.min_distance,
            "min_distance_matrix": [
                [round(float(v), 6) for v in row] for row in self.min_distance_matrix
            ],
            "violations": [
                {"pair": [int(i), int(j)], "time": float(t), "distance": float(d)}
                for i, j, t, d in self.violations
            ],
        }


def make_fallback(kind: str, spec, model: DubinsModel):
    """Fallback control law for the least-restrictive branch."""
    if kind == "target":
        cx, cy = spec.target_center

        def fallback(t, x):
            bearing = math.atan2(cy - x[1], cx - x[0])
            err = (bearing - x[2] + math.pi) % (2 * math.pi) - math.pi
            w = max(-model.omega_max, min(model.omega_max, 4.0 * err))
            return np.array([model.v_max, w])

        return fallback
    if kind == "turn-left":
        u = np.array([model.v_max, model.omega_max])
        return lambda t, x: u
    raise ValueError(f"unknown fallback {kind!r}")


def controller_for(plan: PlanResult, fallback: str = "target", eps_cells: float = 1.5):
    """The flight controller a vehicle actually applies for its method."""
    if plan.method == "cc":
        return plan.policy
    if plan.method == "lrc":
        fb = make_fallback(fallback, plan.vehicle, plan.vehicle.model)
        return LeastRestrictivePolicy(plan.policy, fb, eps_cells)
    if plan.method == "rtt":
        return plan.policy
    raise ValueError(f"unknown method {plan.method!r}")


def _draw_disturbance(policy: DisturbancePolicy, rng, controller, model, t, x):
    if policy.mode == "zero" or (model.d_pos_max == 0 and model.d_theta_max == 0):
        return np.zeros(3)
    if policy.mode == "random":
        angle = rng.uniform(0, 2 * math.pi)
        r = model.d_pos_max * math.sqrt(rng.uniform())
        dt = rng.uniform(-model.d_theta_max, model.d_theta_max)
        return np.array([r * math.cos(angle), r * math.sin(angle), dt])
    return controller.adversarial_disturbance(t, x)


def _rk4(x, u, d, h):
    def f(x):
        return np.array(
            [u[0] * math.cos(x[2]) + d[0], u[0] * math.sin(x[2]) + d[1], u[1] + d[2]]
        )

    k1 = f(x)
    k2 = f(x + h / 2 * k1)
    k3 = f(x + h / 2 * k2)
    k4 = f(x + h * k3)
    out = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    out[2] %= 2 * math.pi
    return out


def simulate_fleet(
    plans: list[PlanResult],
    disturbance: DisturbancePolicy = DisturbancePolicy(),
    dt: float = DT_DEFAULT,
    fallback: str = "target",
    eps_cells: float = 1.5,
) -> list[Trajectory]:
    """Integrate every vehicle from its departure time to its arrival time.

    Controls and disturbances are held constant within a step (RK4 on the
    held inputs); states wrap the heading into [0, 2pi).
    """
    if not plans:
        return []
    methods = {p.method for p in plans}
    if len(methods) > 1:
        raise ValueError("all plans must come from one method")
    t0 = min(p.ldt for p in plans)
    t_end = max(p.vehicle.arrival_time for p in plans)
    n = max(1, int(math.ceil((t_end - t0) / dt - 1e-9)))
    times = t0 + (t_end - t0) * np.arange(n + 1) / n
    h = (t_end - t0) / n

    rng = np.random.default_rng(disturbance.seed)
    controllers = [controller_for(p, fallback, eps_cells) for p in plans]
    # departures snap down onto the sim lattice: never later than ldt
    departures = [times[int(np.floor((p.ldt - t0) / h + 1e-9))] for p in plans]

    states = [np.asarray(p.vehicle.x0, dtype=float).copy() for p in plans]
    rec_states = [[] for _ in plans]
    rec_controls = [[] for _ in plans]
    rec_dist = [[] for _ in plans]

    for k, t in enumerate(times):
        for i, plan in enumerate(plans):
            rec_states[i].append(states[i].copy())
            if k == n:
                rec_controls[i].append(np.full(2, np.nan))
                rec_dist[i].append(np.full(3, np.nan))
                continue
            if t < departures[i] - 1e-12 or t > plan.vehicle.arrival_time - 1e-12:
                rec_controls[i].append(np.full(2, np.nan))
                rec_dist[i].append(np.full(3, np.nan))
                continue
            model = plan.vehicle.model
            u = np.asarray(controllers[i].control(t, states[i]), dtype=float)
            d = _draw_disturbance(disturbance, rng, controllers[i], model, t, states[i])
            states[i] = _rk4(states[i], u, d, h)
            rec_controls[i].append(u)
            rec_dist[i].append(d)

    return [
        Trajectory(
            priority=plan.vehicle.priority,
            times=times.copy(),
            states=np.array(rec_states[i]),
            controls=np.array(rec_controls[i]),
            disturbances=np.array(rec_dist[i]),
            departure_time=departures[i],
        )
        for i, plan in enumerate(plans)
    ]


def check_safety(trajectories: list[Trajectory], capture_radius: float) -> SafetyReport:
    """Minimum pairwise distance over the common clock, plus violations."""
    n = len(trajectories)
    matrix = np.full((n, n), np.inf)
    violations = []
    if n > 1:
        times = trajectories[0].times
        for t in trajectories[1:]:
            if t.times.shape != times.shape or not np.allclose(t.times, times):
                raise ValueError("trajectories do not share a common clock")
        pos = np.stack([t.positions() for t in trajectories])  # (n, T, 2)
        for i in range(n):
            for j in range(i + 1, n):
                d = np.hypot(
                    pos[i, :, 0] - pos[j, :, 0], pos[i, :, 1] - pos[j, :, 1]
                )
                matrix[i, j] = matrix[j, i] = d.min()
                for k in np.nonzero(d <= capture_radius)[0]:
                    violations.append(
                        (
                            trajectories[i].priority,
                            trajectories[j].priority,
                            float(times[k]),
                            float(d[k]),
                        )
                    )
    finite = matrix[np.isfinite(matrix)]
    return SafetyReport(
        capture_radius=capture_radius,
        min_distance=float(finite.min()) if finite.size else np.inf,
        min_distance_matrix=matrix,
        violations=violations,
    )


def check_arrival(trajectory: Trajectory, target_center, target_radius: float,
                  arrival_time: float) -> ArrivalResult:
    """First time the position enters the target ball; success iff on time."""
    cx, cy = target_center
    d = np.hypot(trajectory.states[:, 0] - cx, trajectory.states[:, 1] - cy)
    inside = np.nonzero(d <= target_radius)[0]
    if inside.size == 0:
        return ArrivalResult(False, None)
    t_arr = float(trajectory.times[inside[0]])
    return ArrivalResult(t_arr <= arrival_time + 1e-9, t_arr)

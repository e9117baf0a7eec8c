"""Dubins vehicle dynamics, analytic Hamiltonians, and feedback policies.

State is (p_x, p_y, theta); control is (v, omega) with box bounds; the
disturbance is a translational component bounded in Euclidean norm plus a
bounded additive turn-rate component:

    dp_x = v cos(theta) + d_x
    dp_y = v sin(theta) + d_y
    dtheta = omega + d_theta,   ||(d_x, d_y)|| <= d_pos_max, |d_theta| <= d_theta_max

Every input enters the dynamics affinely, so all the game Hamiltonians and
their arg-optimizers have closed forms (bang-bang with midpoint ties).
"""

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

from .grid import Grid, ScalarField, TimeIndexedField, central_gradient, interpolate
from .levelset import Hamiltonian


@dataclass(frozen=True)
class DubinsModel:
    v_min: float
    v_max: float
    omega_max: float
    d_pos_max: float = 0.0
    d_theta_max: float = 0.0

    def __post_init__(self):
        if not 0 < self.v_min <= self.v_max:
            raise ValueError("need 0 < v_min <= v_max")
        if self.omega_max <= 0:
            raise ValueError("omega_max must be positive")
        if self.d_pos_max < 0 or self.d_theta_max < 0:
            raise ValueError("disturbance bounds must be >= 0")

    @property
    def v_mid(self) -> float:
        return 0.5 * (self.v_min + self.v_max)

    def check_control(self, u):
        v, w = u
        if not (self.v_min - 1e-9 <= v <= self.v_max + 1e-9) or abs(w) > self.omega_max + 1e-9:
            raise ValueError(f"control {u} outside bounds")

    def check_disturbance(self, d):
        if math.hypot(d[0], d[1]) > self.d_pos_max + 1e-9 or abs(d[2]) > self.d_theta_max + 1e-9:
            raise ValueError(f"disturbance {d} outside bounds")

    def flow(self, x, u, d=(0.0, 0.0, 0.0)) -> np.ndarray:
        self.check_control(u)
        self.check_disturbance(d)
        v, w = u
        theta = x[2]
        return np.array(
            [v * math.cos(theta) + d[0], v * math.sin(theta) + d[1], w + d[2]]
        )

    def alpha(self) -> tuple[float, float, float]:
        """Dissipation bounds |dH/dlambda| shared by all this model's games."""
        return (
            self.v_max + self.d_pos_max,
            self.v_max + self.d_pos_max,
            self.omega_max + self.d_theta_max,
        )


def _bang(coef, lo, hi):
    """Value in [lo, hi] minimizing coef * value; midpoint on ties."""
    mid = 0.5 * (lo + hi)
    return np.where(coef > 0, lo, np.where(coef < 0, hi, mid))


def argmin_control(model: DubinsModel, x, lam) -> np.ndarray:
    """Control minimizing lam . f(x, u, .) (the reach-optimal control)."""
    theta = np.asarray(x, dtype=float)[..., 2]
    lam = np.asarray(lam, dtype=float)
    a = lam[..., 0] * np.cos(theta) + lam[..., 1] * np.sin(theta)
    v = _bang(a, model.v_min, model.v_max)
    w = _bang(lam[..., 2], -model.omega_max, model.omega_max)
    return np.stack([v, w], axis=-1)


def argmax_disturbance(model: DubinsModel, x, lam) -> np.ndarray:
    """Disturbance maximizing lam . f(x, ., d) (the worst case)."""
    lam = np.asarray(lam, dtype=float)
    norm = np.hypot(lam[..., 0], lam[..., 1])
    safe = np.where(norm > 0, norm, 1.0)
    dx = model.d_pos_max * lam[..., 0] / safe
    dy = model.d_pos_max * lam[..., 1] / safe
    dt = model.d_theta_max * np.sign(lam[..., 2])
    return np.stack([np.where(norm > 0, dx, 0.0), np.where(norm > 0, dy, 0.0), dt], axis=-1)


def _minmax_core(model, cos_t, sin_t, l1, l2, l3):
    a = l1 * cos_t + l2 * sin_t
    return (
        np.minimum(a * model.v_min, a * model.v_max)
        - model.omega_max * np.abs(l3)
        + model.d_pos_max * np.hypot(l1, l2)
        + model.d_theta_max * np.abs(l3)
    )


def _maxmax_core(model, cos_t, sin_t, l1, l2, l3):
    a = l1 * cos_t + l2 * sin_t
    return (
        np.maximum(a * model.v_min, a * model.v_max)
        + model.omega_max * np.abs(l3)
        + model.d_pos_max * np.hypot(l1, l2)
        + model.d_theta_max * np.abs(l3)
    )


def ham_brs_minmax(model: DubinsModel, x, lam) -> float:
    """min over controls, max over disturbances of lam . f."""
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lam, dtype=float)
    return _minmax_core(
        model, np.cos(x[..., 2]), np.sin(x[..., 2]), lam[..., 0], lam[..., 1], lam[..., 2]
    )


def ham_frs_maxmax(model: DubinsModel, x, lam) -> float:
    """max over controls and disturbances of lam . f."""
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lam, dtype=float)
    return _maxmax_core(
        model, np.cos(x[..., 2]), np.sin(x[..., 2]), lam[..., 0], lam[..., 1], lam[..., 2]
    )


def _grid_trig(grid: Grid):
    theta = grid.coords[2].reshape(1, 1, -1)
    return np.cos(theta), np.sin(theta)


def _grid_alpha(model: DubinsModel, cos_t, sin_t, opposed: bool):
    # node-wise |dH/dlam| bounds: the position components scale with the
    # local heading, which keeps crossing corridors sharp.  When control and
    # disturbance play opposite sides, their heading terms partially cancel:
    # the theta slope is (omega_max - d_theta_max), not the sum.
    if opposed:
        a3 = abs(model.omega_max - model.d_theta_max)
    else:
        a3 = model.omega_max + model.d_theta_max
    return (
        model.v_max * np.abs(cos_t) + model.d_pos_max,
        model.v_max * np.abs(sin_t) + model.d_pos_max,
        a3,
    )


def brs_hamiltonian(model: DubinsModel, grid: Grid) -> Hamiltonian:
    """Grid-bound min-max Hamiltonian (reach under worst-case disturbance)."""
    cos_t, sin_t = _grid_trig(grid)

    def fn(t, coords, lam):
        return _minmax_core(model, cos_t, sin_t, *lam)

    return Hamiltonian(fn=fn, alpha=_grid_alpha(model, cos_t, sin_t, opposed=True))


def frs_hamiltonian(model: DubinsModel, grid: Grid) -> Hamiltonian:
    """Grid-bound max-max Hamiltonian (all controls and disturbances)."""
    cos_t, sin_t = _grid_trig(grid)

    def fn(t, coords, lam):
        return _maxmax_core(model, cos_t, sin_t, *lam)

    return Hamiltonian(fn=fn, alpha=_grid_alpha(model, cos_t, sin_t, opposed=False))


def closed_loop_frs_hamiltonian(policy: "OptimalPolicy", grid: Grid) -> Hamiltonian:
    """max over disturbances of lam . f(x, u*(t, x), d).

    The control is pinned to the stored feedback law: the arg-min against
    the gradient of the policy's own value function, interpolated in time.
    ``grid`` may refine the policy grid's heading axis (closed-loop forward
    sets are thin in heading); the stored gradient is then resampled.
    """
    model = policy.model
    cos_t, sin_t = _grid_trig(grid)
    base = policy.values.grid
    same_grid = base == grid
    if not same_grid:
        if base.subgrid((0, 1)) != grid.subgrid((0, 1)) or not grid.periodic[2]:
            raise ValueError("refined grid must match the policy grid except in heading")
        u = (grid.coords[2] - base.lo[2]) / base.spacing[2]
        i0 = np.floor(u).astype(np.int64) % base.counts[2]
        i1 = (i0 + 1) % base.counts[2]
        w = (u - np.floor(u)).reshape(1, 1, -1)

    def resample(g):
        return g[:, :, i0] * (1.0 - w) + g[:, :, i1] * w

    def closed_loop_velocity(t, coords):
        g1, g2, g3 = policy.values.gradient_on_grid(t)
        if not same_grid:
            g1, g2, g3 = resample(g1), resample(g2), resample(g3)
        a = g1 * cos_t + g2 * sin_t
        v_star = _bang(a, model.v_min, model.v_max)
        w_star = _bang(g3, -model.omega_max, model.omega_max)
        return (v_star * cos_t, v_star * sin_t, w_star)

    def residual(t, coords, lam):
        l1, l2, l3 = lam
        return model.d_pos_max * np.hypot(l1, l2) + model.d_theta_max * np.abs(l3)

    # the control-pinned flow is pure advection for the forward set; only
    # the disturbance envelope needs Lax-Friedrichs dissipation
    return Hamiltonian(
        fn=residual,
        alpha=(model.d_pos_max, model.d_pos_max, model.d_theta_max),
        advection=closed_loop_velocity,
        advection_bound=(model.v_max, model.v_max, model.omega_max),
    )


def ham_frs_closed_loop(policy: "OptimalPolicy", x, lam, t) -> float:
    """Pointwise closed-loop Hamiltonian (see closed_loop_frs_hamiltonian)."""
    model = policy.model
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lam, dtype=float)
    u_star = policy.control(t, x)
    f = np.array(
        [u_star[0] * math.cos(x[2]), u_star[0] * math.sin(x[2]), u_star[1]]
    )
    return float(
        lam @ f + model.d_pos_max * math.hypot(lam[0], lam[1]) + model.d_theta_max * abs(lam[2])
    )


# --- relative-frame tracking-error dynamics ----------------------------------


@dataclass(frozen=True)
class ErrorModel:
    """Tracker-vs-planner error game in the reference frame.

    The tracker flies the full model; the planner reference uses a reduced
    speed range and turn rate.  Error coordinates (e_x, e_y, e_theta) are the
    tracker's state expressed in the reference's body frame, so translational
    disturbances appear rotated (norm bound unchanged).
    """

    tracker: DubinsModel
    planner_v: tuple[float, float]
    planner_omega_max: float
    grid: Grid

    def __post_init__(self):
        lo, hi = self.planner_v
        if not (self.tracker.v_min <= lo <= hi <= self.tracker.v_max):
            raise ValueError("planner speed range must sit inside the tracker's")
        if not 0 < self.planner_omega_max <= self.tracker.omega_max:
            raise ValueError("planner turn rate must sit inside the tracker's")
        if self.grid.ndim != 3:
            raise ValueError("error grid must be (e_x, e_y, e_theta)")

    def planner_model(self) -> DubinsModel:
        """Disturbance-free reduced-authority model used for nominal planning."""
        lo, hi = self.planner_v
        return DubinsModel(lo, hi, self.planner_omega_max)


def error_flow(em: ErrorModel, e, u, u_r, d=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Relative-frame error derivative; ``d`` is already reference-frame."""
    em.tracker.check_control(u)
    em.tracker.check_disturbance(d)
    v_r, w_r = u_r
    lo, hi = em.planner_v
    if not (lo - 1e-9 <= v_r <= hi + 1e-9) or abs(w_r) > em.planner_omega_max + 1e-9:
        raise ValueError(f"reference control {u_r} outside planner bounds")
    v, w = u
    ex, ey, et = e
    return np.array(
        [
            v * math.cos(et) - v_r + w_r * ey + d[0],
            v * math.sin(et) - w_r * ex + d[1],
            w - w_r + d[2],
        ]
    )


def _error_core(em: ErrorModel, ex, ey, et, l1, l2, l3):
    b = l1 * np.cos(et) + l2 * np.sin(et)
    tr = em.tracker
    lo, hi = em.planner_v
    h = np.maximum(b * tr.v_min, b * tr.v_max) + tr.omega_max * np.abs(l3)
    h = h + np.minimum(-l1 * lo, -l1 * hi)
    h = h - em.planner_omega_max * np.abs(l1 * ey - l2 * ex - l3)
    h = h - tr.d_pos_max * np.hypot(l1, l2) - tr.d_theta_max * np.abs(l3)
    return h


def ham_error_maxminmin(em: ErrorModel, e, lam) -> float:
    """max over tracker, min over planner and disturbance of lam . f_e."""
    e = np.asarray(e, dtype=float)
    lam = np.asarray(lam, dtype=float)
    return _error_core(
        em, e[..., 0], e[..., 1], e[..., 2], lam[..., 0], lam[..., 1], lam[..., 2]
    )


def tracking_control(em: ErrorModel, e, lam) -> np.ndarray:
    """Tracker control achieving the max in the error Hamiltonian."""
    e = np.asarray(e, dtype=float)
    lam = np.asarray(lam, dtype=float)
    b = lam[..., 0] * np.cos(e[..., 2]) + lam[..., 1] * np.sin(e[..., 2])
    v = _bang(-b, em.tracker.v_min, em.tracker.v_max)  # maximize b*v
    w = _bang(-lam[..., 2], -em.tracker.omega_max, em.tracker.omega_max)
    return np.stack([v, w], axis=-1)


def error_hamiltonian(em: ErrorModel) -> Hamiltonian:
    """Grid-bound tracking-error game Hamiltonian with domain-wide alpha."""
    ex, ey, et = em.grid.mesh()
    cos_e, sin_e = np.cos(et), np.sin(et)
    tr = em.tracker
    lo, hi = em.planner_v

    def fn(t, coords, lam):
        l1, l2, l3 = lam
        b = l1 * cos_e + l2 * sin_e
        h = np.maximum(b * tr.v_min, b * tr.v_max) + tr.omega_max * np.abs(l3)
        h = h + np.minimum(-l1 * lo, -l1 * hi)
        h = h - em.planner_omega_max * np.abs(l1 * ey - l2 * ex - l3)
        return h - tr.d_pos_max * np.hypot(l1, l2) - tr.d_theta_max * np.abs(l3)

    alpha = (
        tr.v_max * np.abs(cos_e) + hi + em.planner_omega_max * np.abs(ey) + tr.d_pos_max,
        tr.v_max * np.abs(sin_e) + em.planner_omega_max * np.abs(ex) + tr.d_pos_max,
        # tracker and heading disturbance oppose; the planner's turn rate adds
        abs(tr.omega_max - tr.d_theta_max) + em.planner_omega_max,
    )
    return Hamiltonian(fn=fn, alpha=alpha)


# --- feedback policies --------------------------------------------------------


class OptimalPolicy:
    """Reach-optimal feedback extracted from a stored value function."""

    def __init__(self, values: TimeIndexedField, model: DubinsModel):
        self.values = values
        self.model = model

    def value(self, t: float, x) -> float:
        return float(self.values.value_at(t, x))

    def gradient(self, t: float, x) -> np.ndarray:
        return self.values.gradient_at(t, x)

    def control(self, t: float, x) -> np.ndarray:
        return argmin_control(self.model, np.asarray(x, dtype=float), self.gradient(t, x))

    def adversarial_disturbance(self, t: float, x) -> np.ndarray:
        return argmax_disturbance(self.model, x, self.gradient(t, x))


def least_restrictive_control(
    policy: OptimalPolicy, t: float, x, fallback_u, eps_cells: float = 1.5
):
    """Optimal control on (a band around) the set boundary, else fallback."""
    policy.model.check_control(fallback_u)
    v = policy.value(t, x)
    grad = policy.gradient(t, x)
    eps = eps_cells * max(policy.values.grid.spacing) * float(np.linalg.norm(grad))
    if abs(v) <= eps:
        return argmin_control(policy.model, np.asarray(x, dtype=float), grad)
    return np.asarray(fallback_u, dtype=float)


class LeastRestrictivePolicy:
    """Free control away from the set boundary, optimal on it."""

    def __init__(
        self,
        base: OptimalPolicy,
        fallback: Callable[[float, np.ndarray], np.ndarray],
        eps_cells: float = 1.5,
    ):
        self.base = base
        self.fallback = fallback
        self.eps_cells = eps_cells
        self.model = base.model
        self.values = base.values

    def control(self, t: float, x) -> np.ndarray:
        return least_restrictive_control(
            self.base, t, x, self.fallback(t, np.asarray(x, dtype=float)), self.eps_cells
        )

    def adversarial_disturbance(self, t: float, x) -> np.ndarray:
        return self.base.adversarial_disturbance(t, x)


class NominalTrajectory:
    """Time-stamped reference states and controls, linearly interpolated."""

    def __init__(self, times, states, controls):
        self.times = np.asarray(times, dtype=float)
        self.states = np.asarray(states, dtype=float)
        self.controls = np.asarray(controls, dtype=float)
        if self.states.shape[0] != self.times.size:
            raise ValueError("states and times length mismatch")
        self._theta_unwrapped = np.unwrap(self.states[:, 2])

    @property
    def t_min(self) -> float:
        return float(self.times[0])

    @property
    def t_max(self) -> float:
        return float(self.times[-1])

    def state(self, t: float) -> np.ndarray:
        t = float(np.clip(t, self.times[0], self.times[-1]))
        x = np.interp(t, self.times, self.states[:, 0])
        y = np.interp(t, self.times, self.states[:, 1])
        th = np.interp(t, self.times, self._theta_unwrapped)
        return np.array([x, y, th % (2 * math.pi)])

    def control(self, t: float) -> np.ndarray:
        k = int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.controls) - 1))
        return self.controls[k]


class TrackingPolicy:
    """Robust tracking law: play the error game against a stored kernel."""

    def __init__(self, kernel_value: ScalarField, errmodel: ErrorModel, nominal: NominalTrajectory):
        self.kernel_value = kernel_value  # avoid-value: sublevel = escape region
        self.errmodel = errmodel
        self.nominal = nominal
        self.model = errmodel.tracker
        self._grad = central_gradient(kernel_value.grid, kernel_value.values)

    def error(self, t: float, x) -> np.ndarray:
        """Tracker state expressed in the reference body frame."""
        x = np.asarray(x, dtype=float)
        ref = self.nominal.state(t)
        c, s = math.cos(ref[2]), math.sin(ref[2])
        rx, ry = x[0] - ref[0], x[1] - ref[1]
        et = (x[2] - ref[2] + math.pi) % (2 * math.pi) - math.pi
        return np.array([c * rx + s * ry, -s * rx + c * ry, et])

    def _costate(self, e) -> np.ndarray:
        grid = self.kernel_value.grid
        return np.stack([interpolate(grid, g, e) for g in self._grad], axis=-1)

    def control(self, t: float, x) -> np.ndarray:
        e = self.error(t, x)
        return tracking_control(self.errmodel, e, self._costate(e))

    def error_value(self, t: float, x) -> float:
        """Kernel-membership value of the current tracking error (<= 0 inside)."""
        e = self.error(t, x)
        return -float(interpolate(self.kernel_value.grid, self.kernel_value.values, e))

    def adversarial_disturbance(self, t: float, x) -> np.ndarray:
        """World-frame disturbance steering the error toward escape."""
        e = self.error(t, x)
        lam = self._costate(e)
        norm = math.hypot(lam[0], lam[1])
        tr = self.errmodel.tracker
        if norm > 0:
            de = -tr.d_pos_max * np.array([lam[0], lam[1]]) / norm
        else:
            de = np.zeros(2)
        ref_theta = self.nominal.state(t)[2]
        c, s = math.cos(ref_theta), math.sin(ref_theta)
        d_world = np.array([c * de[0] - s * de[1], s * de[0] + c * de[1]])
        dt = -tr.d_theta_max * math.copysign(1.0, lam[2]) if lam[2] != 0 else 0.0
        return np.array([d_world[0], d_world[1], dt])

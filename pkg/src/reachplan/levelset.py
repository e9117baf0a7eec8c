"""Spatial derivatives, Lax-Friedrichs Hamiltonians, and TVD-RK stepping.

Everything here advances the PDE  D_t V + H(t, x, D_x V) = 0  by a positive
time increment; callers solving backward-time problems flip the sign of H
(and of the time axis) themselves.  The numerical Hamiltonian is the
standard Lax-Friedrichs form

    H_hat = H(t, x, (Dm + Dp)/2) - sum_k alpha_k (Dp_k - Dm_k)/2

which is monotone provided alpha_k >= max |dH/dlambda_k| and the time step
satisfies the CFL bound  dt * sum_k alpha_k / dx_k <= cfl_max.
"""

import os
from dataclasses import dataclass
from typing import Callable

import numpy as np

os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

try:
    from numba import njit, prange, set_num_threads

    HAVE_NUMBA = True
    _threads = os.environ.get("REACHPLAN_THREADS")
    if _threads and _threads.isdigit() and int(_threads) > 0:
        set_num_threads(int(_threads))
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap if not (args and callable(args[0])) else args[0]

    prange = range

from .grid import Grid, ScalarField

CFL_MAX_DEFAULT = 0.5

SCHEMES = ("upwind1", "weno5")


class CflViolationError(ValueError):
    """Time step exceeds the stability bound for the given dissipation."""


@dataclass(frozen=True)
class Hamiltonian:
    """Analytic Hamiltonian plus its per-dimension dissipation bounds.

    ``fn(t, coords, lam)`` maps broadcastable coordinate arrays and costate
    arrays to the Hamiltonian value array; ``alpha[k]`` bounds |dH/dlambda_k|.

    Hamiltonians of the form  sum_k c_k(t, x) lam_k + R(t, x, lam)  may set
    ``advection`` to return the velocity arrays c_k; the linear part is then
    discretized with plain upwinding (no artificial dissipation), ``fn`` is
    treated as the residual R alone, and ``alpha`` bounds only |dR/dlam_k|.
    Thin transported sets survive far longer this way than under global
    Lax-Friedrichs dissipation sized for the full Hamiltonian.
    """

    fn: Callable
    alpha: tuple  # floats or broadcastable arrays of node-wise bounds
    advection: Callable | None = None
    advection_bound: tuple[float, ...] | None = None

    def __post_init__(self):
        for a in self.alpha:
            if not (np.all(np.isfinite(a)) and np.all(np.asarray(a) >= 0)):
                raise ValueError("dissipation bounds must be finite and >= 0")
        if self.advection is not None and self.advection_bound is None:
            raise ValueError("advective Hamiltonians must declare advection_bound")

    def __call__(self, t, coords, lam):
        return self.fn(t, coords, lam)

    def wave_speeds(self) -> tuple[float, ...]:
        """Per-dimension scalar bounds on the total information speed."""
        speeds = tuple(float(np.max(a)) for a in self.alpha)
        if self.advection is None:
            return speeds
        return tuple(a + c for a, c in zip(speeds, self.advection_bound))


@dataclass(frozen=True)
class GradientPair:
    """Left- and right-biased one-sided derivative arrays per dimension."""

    left: tuple[np.ndarray, ...]
    right: tuple[np.ndarray, ...]


def _pad(values: np.ndarray, axis: int, width: int, periodic: bool) -> np.ndarray:
    """Ghost nodes: periodic wrap or sign-preserving linear extrapolation.

    Non-periodic ghosts extrapolate with the edge slope magnitude directed
    away from the zero level (implicit surfaces keep their sign at the
    boundary); extending the raw slope instead lets inflow characteristics
    drag values down without bound.
    """
    if periodic:
        lo = values.take(range(values.shape[axis] - width, values.shape[axis]), axis=axis)
        hi = values.take(range(width), axis=axis)
        return np.concatenate([lo, values, hi], axis=axis)
    first = values.take([0], axis=axis)
    second = values.take([1], axis=axis)
    last = values.take([-1], axis=axis)
    prev = values.take([-2], axis=axis)
    slope_lo = np.sign(first) * np.abs(second - first)
    slope_hi = np.sign(last) * np.abs(last - prev)
    lo = [first + k * slope_lo for k in range(width, 0, -1)]
    hi = [last + k * slope_hi for k in range(1, width + 1)]
    return np.concatenate(lo + [values] + hi, axis=axis)


def _upwind1_axis(values, axis, dx, periodic):
    if HAVE_NUMBA:
        padded, shape = _axis_rows(values, axis, 1, periodic)
        left = np.empty((padded.shape[0], shape[-1]))
        right = np.empty_like(left)
        _upwind1_rows(padded, 1.0 / dx, left, right)
        return _rows_to_axis(left, shape, axis), _rows_to_axis(right, shape, axis)
    padded = _pad(values, axis, 1, periodic)
    diff = np.diff(padded, axis=axis) / dx
    n = values.shape[axis]
    left = diff.take(range(0, n), axis=axis)
    right = diff.take(range(1, n + 1), axis=axis)
    return left, right


def _weno5_combine(v1, v2, v3, v4, v5, eps):
    # smoothness indicators (Jiang-Shu), reusing temporaries: the stepping
    # loop is memory-bound at production grid sizes
    t = v1 - 2.0 * v2
    t += v3
    s1 = np.square(t, out=t)
    s1 *= 13.0 / 12.0
    t2 = v1 - 4.0 * v2
    t2 += 3.0 * v3
    np.square(t2, out=t2)
    t2 *= 0.25
    s1 += t2

    t = np.subtract(v2, 2.0 * v3, out=t2)
    t += v4
    s2 = np.square(t, out=t)
    s2 *= 13.0 / 12.0
    t2 = v2 - v4
    np.square(t2, out=t2)
    t2 *= 0.25
    s2 += t2

    t = np.subtract(v3, 2.0 * v4, out=t2)
    t += v5
    s3 = np.square(t, out=t)
    s3 *= 13.0 / 12.0
    t2 = 3.0 * v3 - 4.0 * v4
    t2 += v5
    np.square(t2, out=t2)
    t2 *= 0.25
    s3 += t2

    a1 = s1
    a1 += eps
    np.square(a1, out=a1)
    np.divide(0.1, a1, out=a1)
    a2 = s2
    a2 += eps
    np.square(a2, out=a2)
    np.divide(0.6, a2, out=a2)
    a3 = s3
    a3 += eps
    np.square(a3, out=a3)
    np.divide(0.3, a3, out=a3)

    total = a1 + a2
    total += a3

    p = v1 / 3.0
    p -= 7.0 / 6.0 * v2
    p += 11.0 / 6.0 * v3
    a1 *= p
    p = np.multiply(v3, 5.0 / 6.0, out=p)
    p -= v2 / 6.0
    p += v4 / 3.0
    a2 *= p
    p = np.multiply(v4, 5.0 / 6.0, out=p)
    p += v3 / 3.0
    p -= v5 / 6.0
    a3 *= p

    out = a1
    out += a2
    out += a3
    out /= total
    return out


def _weno5_axis_numpy(values, axis, dx, periodic):
    padded = _pad(values, axis, 3, periodic)
    diff = np.diff(padded, axis=axis)
    diff /= dx
    n = values.shape[axis]
    # absolute regularization on the grid's gradient scale (Jiang-Shu style)
    eps = 1e-6 * float(np.max(np.abs(diff))) ** 2 + 1e-99

    def d(offset):
        # view of the one-sided differences (V[j+1]-V[j])/dx for j = i+offset
        sl = [slice(None)] * diff.ndim
        sl[axis] = slice(3 + offset, 3 + offset + n)
        return diff[tuple(sl)]

    left = _weno5_combine(d(-3), d(-2), d(-1), d(0), d(1), eps)
    right = _weno5_combine(d(2), d(1), d(0), d(-1), d(-2), eps)
    return left, right


@njit(inline="always")
def _weno5_point(v1, v2, v3, v4, v5, eps):
    s1 = 13.0 / 12.0 * (v1 - 2.0 * v2 + v3) ** 2 + 0.25 * (v1 - 4.0 * v2 + 3.0 * v3) ** 2
    s2 = 13.0 / 12.0 * (v2 - 2.0 * v3 + v4) ** 2 + 0.25 * (v2 - v4) ** 2
    s3 = 13.0 / 12.0 * (v3 - 2.0 * v4 + v5) ** 2 + 0.25 * (3.0 * v3 - 4.0 * v4 + v5) ** 2
    a1 = 0.1 / (s1 + eps) ** 2
    a2 = 0.6 / (s2 + eps) ** 2
    a3 = 0.3 / (s3 + eps) ** 2
    p1 = v1 / 3.0 - 7.0 * v2 / 6.0 + 11.0 * v3 / 6.0
    p2 = -v2 / 6.0 + 5.0 * v3 / 6.0 + v4 / 3.0
    p3 = v3 / 3.0 + 5.0 * v4 / 6.0 - v5 / 6.0
    return (a1 * p1 + a2 * p2 + a3 * p3) / (a1 + a2 + a3)


@njit(parallel=True, cache=True)
def _weno5_rows(padded, inv_dx, eps, left, right):
    rows, n6 = padded.shape
    n = n6 - 6
    for m in prange(rows):
        row = padded[m]
        for i in range(n):
            d0 = (row[i + 1] - row[i]) * inv_dx
            d1 = (row[i + 2] - row[i + 1]) * inv_dx
            d2 = (row[i + 3] - row[i + 2]) * inv_dx
            d3 = (row[i + 4] - row[i + 3]) * inv_dx
            d4 = (row[i + 5] - row[i + 4]) * inv_dx
            d5 = (row[i + 6] - row[i + 5]) * inv_dx
            left[m, i] = _weno5_point(d0, d1, d2, d3, d4, eps)
            right[m, i] = _weno5_point(d5, d4, d3, d2, d1, eps)


@njit(parallel=True, cache=True)
def _upwind1_rows(padded, inv_dx, left, right):
    rows, n2 = padded.shape
    n = n2 - 2
    for m in prange(rows):
        row = padded[m]
        for i in range(n):
            left[m, i] = (row[i + 1] - row[i]) * inv_dx
            right[m, i] = (row[i + 2] - row[i + 1]) * inv_dx


def _axis_rows(values, axis, width, periodic):
    """Contiguous (rows, n + 2*width) layout with ghost nodes appended."""
    moved = np.moveaxis(values, axis, -1)
    shape = moved.shape
    flat = np.ascontiguousarray(moved).reshape(-1, shape[-1])
    n = shape[-1]
    padded = np.empty((flat.shape[0], n + 2 * width))
    padded[:, width : width + n] = flat
    if periodic:
        padded[:, :width] = flat[:, n - width :]
        padded[:, width + n :] = flat[:, :width]
    else:
        slope_lo = np.sign(flat[:, 0]) * np.abs(flat[:, 1] - flat[:, 0])
        slope_hi = np.sign(flat[:, -1]) * np.abs(flat[:, -1] - flat[:, -2])
        for k in range(width):
            padded[:, width - 1 - k] = flat[:, 0] + (k + 1) * slope_lo
            padded[:, width + n + k] = flat[:, -1] + (k + 1) * slope_hi
    return padded, shape


def _rows_to_axis(arr, shape, axis):
    return np.moveaxis(arr.reshape(shape), -1, axis)


def _weno5_axis(values, axis, dx, periodic):
    if not HAVE_NUMBA:
        return _weno5_axis_numpy(values, axis, dx, periodic)
    padded, shape = _axis_rows(values, axis, 3, periodic)
    diff_max = float(np.max(np.abs(np.diff(padded, axis=1)))) / dx
    eps = 1e-6 * diff_max**2 + 1e-99
    left = np.empty((padded.shape[0], shape[-1]))
    right = np.empty_like(left)
    _weno5_rows(padded, 1.0 / dx, eps, left, right)
    return _rows_to_axis(left, shape, axis), _rows_to_axis(right, shape, axis)


def upwind_raw(grid: Grid, values: np.ndarray, scheme: str = "upwind1"):
    """One-sided derivative arrays (left list, right list) per dimension."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    min_nodes = 3 if scheme == "upwind1" else 7
    left, right = [], []
    for axis in range(grid.ndim):
        if grid.counts[axis] < min_nodes:
            raise ValueError(f"scheme {scheme} needs >= {min_nodes} nodes per dimension")
        fn = _upwind1_axis if scheme == "upwind1" else _weno5_axis
        l, r = fn(values, axis, grid.spacing[axis], grid.periodic[axis])
        left.append(l)
        right.append(r)
    return left, right


def upwind_derivatives(field: ScalarField, scheme: str = "upwind1") -> GradientPair:
    left, right = upwind_raw(field.grid, field.values, scheme)
    return GradientPair(tuple(left), tuple(right))


def cfl_timestep(grid: Grid, ham: Hamiltonian, cfl_max: float = CFL_MAX_DEFAULT) -> float:
    """Largest stable time step for the given wave-speed bounds."""
    speed = sum(a / dx for a, dx in zip(ham.wave_speeds(), grid.spacing))
    if speed <= 0:
        return np.inf
    return cfl_max / speed


def _check_cfl(grid, ham, dt, cfl_max):
    speed = sum(a / dx for a, dx in zip(ham.wave_speeds(), grid.spacing))
    if dt * speed > cfl_max * (1 + 1e-9):
        raise CflViolationError(
            f"dt={dt:g} violates CFL bound {cfl_max / speed if speed else np.inf:g}"
        )


def _lf_update(grid, values, ham, t, scheme):
    """Right-hand side  H_hat  of the method-of-lines system dV/dt = -H_hat."""
    left, right = upwind_raw(grid, values, scheme)
    lam = tuple(0.5 * (l + r) for l, r in zip(left, right))
    h = ham(t, grid.mesh(), lam)
    for a, l, r in zip(ham.alpha, left, right):
        if np.any(a):
            h = h - 0.5 * a * (r - l)
    if ham.advection is not None:
        for c, l, r in zip(ham.advection(t, grid.mesh()), left, right):
            h = h + c * np.where(c > 0, l, r)
    return h


def lax_friedrichs_step(
    grid: Grid,
    values: np.ndarray,
    ham: Hamiltonian,
    t: float,
    dt: float,
    scheme: str = "upwind1",
    cfl_max: float = CFL_MAX_DEFAULT,
) -> np.ndarray:
    """One forward-Euler Lax-Friedrichs step of size dt starting at time t."""
    _check_cfl(grid, ham, dt, cfl_max)
    return values - dt * _lf_update(grid, values, ham, t, scheme)


def tvd_rk_step(
    grid: Grid,
    values: np.ndarray,
    ham: Hamiltonian,
    t: float,
    dt: float,
    order: int = 2,
    scheme: str = "upwind1",
    cfl_max: float = CFL_MAX_DEFAULT,
) -> np.ndarray:
    """TVD Runge-Kutta step (orders 1-3); order 1 is the plain LF step."""
    if order == 1:
        return lax_friedrichs_step(grid, values, ham, t, dt, scheme, cfl_max)
    _check_cfl(grid, ham, dt, cfl_max)
    if order == 2:
        v1 = values - dt * _lf_update(grid, values, ham, t, scheme)
        v2 = v1 - dt * _lf_update(grid, v1, ham, t + dt, scheme)
        return 0.5 * (values + v2)
    if order == 3:
        v1 = values - dt * _lf_update(grid, values, ham, t, scheme)
        v2 = v1 - dt * _lf_update(grid, v1, ham, t + dt, scheme)
        v2 = 0.75 * values + 0.25 * v2
        v3 = v2 - dt * _lf_update(grid, v2, ham, t + 0.5 * dt, scheme)
        return (values + 2.0 * v3) / 3.0
    raise ValueError(f"unsupported TVD-RK order {order}")

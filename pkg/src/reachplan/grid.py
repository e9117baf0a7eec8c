"""Rectangular state-space grids and implicit-surface fields.

A set S is represented by a scalar field whose zero sublevel set is S
(negative inside, positive outside).  Set algebra then becomes pointwise
arithmetic: union = min, intersection = max, complement = negation.
Fields are immutable once built and safe to share across threads.
"""

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import ndimage

# Stand-in value for "no set anywhere": large but finite so every field
# satisfies the all-finite invariant.
LARGE = 1.0e6


class GridMismatchError(ValueError):
    """Raised when an operation mixes fields that live on different grids."""


def _as_tuple(x, n, cast):
    seq = tuple(cast(v) for v in x)
    if len(seq) != n:
        raise ValueError(f"expected {n} entries, got {len(seq)}")
    return seq


@dataclass(frozen=True)
class Grid:
    """Uniform rectangular grid, optionally periodic per dimension.

    Non-periodic dimensions include both endpoints (spacing (hi-lo)/(N-1));
    periodic dimensions exclude the upper endpoint (spacing (hi-lo)/N) and
    wrap index N back to 0.
    """

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    counts: tuple[int, ...]
    periodic: tuple[bool, ...]

    @property
    def ndim(self) -> int:
        return len(self.counts)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.counts

    @cached_property
    def spacing(self) -> tuple[float, ...]:
        out = []
        for lo, hi, n, per in zip(self.lo, self.hi, self.counts, self.periodic):
            out.append((hi - lo) / n if per else (hi - lo) / (n - 1))
        return tuple(out)

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        """Per-dimension node coordinate vectors."""
        out = []
        for lo, n, dx in zip(self.lo, self.counts, self.spacing):
            out.append(lo + dx * np.arange(n))
        return tuple(out)

    def mesh(self) -> tuple[np.ndarray, ...]:
        """Sparse broadcastable coordinate arrays (one per dimension)."""
        return tuple(np.meshgrid(*self.coords, indexing="ij", sparse=True))

    def num_nodes(self) -> int:
        return int(np.prod(self.counts))

    def subgrid(self, dims: tuple[int, ...]) -> "Grid":
        """Grid restricted to the given dimensions (order preserved)."""
        return Grid(
            tuple(self.lo[d] for d in dims),
            tuple(self.hi[d] for d in dims),
            tuple(self.counts[d] for d in dims),
            tuple(self.periodic[d] for d in dims),
        )


def make_grid(bounds, counts, periodic=None) -> Grid:
    """Build a grid from per-dimension (lo, hi) intervals and node counts."""
    ndim = len(counts)
    if periodic is None:
        periodic = (False,) * ndim
    counts = _as_tuple(counts, ndim, int)
    periodic = _as_tuple(periodic, ndim, bool)
    lo = tuple(float(b[0]) for b in bounds)
    hi = tuple(float(b[1]) for b in bounds)
    if len(lo) != ndim:
        raise ValueError("bounds and counts length mismatch")
    for d, (a, b) in enumerate(zip(lo, hi)):
        if not b > a:
            raise ValueError(f"degenerate interval [{a}, {b}] in dimension {d}")
    for d, n in enumerate(counts):
        if n < 3:
            raise ValueError(f"node count {n} < 3 in dimension {d}")
    return Grid(lo, hi, counts, periodic)


@dataclass(frozen=True)
class ScalarField:
    """One scalar value per grid node; immutable after construction."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.shape != self.grid.shape:
            raise ValueError(
                f"value shape {values.shape} does not match grid {self.grid.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("field contains non-finite values")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def interpolate(self, points: np.ndarray) -> np.ndarray:
        """Multilinear interpolation at query points (..., ndim)."""
        return interpolate(self.grid, self.values, points)


def _check_same_grid(a: ScalarField, b: ScalarField):
    if a.grid != b.grid:
        raise GridMismatchError("fields live on different grids")


def field_union(a: ScalarField, b: ScalarField) -> ScalarField:
    _check_same_grid(a, b)
    return ScalarField(a.grid, np.minimum(a.values, b.values))


def field_intersection(a: ScalarField, b: ScalarField) -> ScalarField:
    _check_same_grid(a, b)
    return ScalarField(a.grid, np.maximum(a.values, b.values))


def field_complement(a: ScalarField) -> ScalarField:
    return ScalarField(a.grid, -a.values)


def empty_field(grid: Grid) -> ScalarField:
    """Field whose zero sublevel set is empty (value LARGE everywhere)."""
    return ScalarField(grid, np.full(grid.shape, LARGE))


def signed_distance_ball(grid: Grid, center, radius: float, dims=None) -> ScalarField:
    """Signed distance to a Euclidean ball over a subset of dimensions.

    The ball lives in the coordinates selected by ``dims`` (default: the
    first len(center) dimensions); the field is constant along the rest.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    center = np.asarray(center, dtype=float)
    if dims is None:
        dims = tuple(range(center.size))
    if len(dims) == 0:
        raise ValueError("dims must be nonempty")
    mesh = grid.mesh()
    sq = np.zeros(grid.shape)
    for c, d in zip(center, dims):
        sq = sq + (mesh[d] - c) ** 2
    return ScalarField(grid, np.sqrt(sq) - radius)


def project_min(field: ScalarField, keep_dims: tuple[int, ...]) -> ScalarField:
    """Existential projection: min over all dropped-dimension slices."""
    ndim = field.grid.ndim
    keep_dims = tuple(keep_dims)
    if len(keep_dims) == 0 or len(keep_dims) >= ndim:
        raise ValueError("keep_dims must be a proper nonempty subset")
    drop = tuple(d for d in range(ndim) if d not in keep_dims)
    values = field.values.min(axis=drop)
    return ScalarField(field.grid.subgrid(keep_dims), values)


def _signed_distance_values(grid: Grid, values: np.ndarray) -> np.ndarray:
    """Signed Euclidean distance to the zero sublevel set, sampled on nodes."""
    inside = values <= 0.0
    if inside.all():
        return np.full(grid.shape, -LARGE)
    if not inside.any():
        return np.full(grid.shape, LARGE)
    sampling = grid.spacing
    d_to_set = ndimage.distance_transform_edt(~inside, sampling=sampling)
    d_to_complement = ndimage.distance_transform_edt(inside, sampling=sampling)
    return d_to_set - d_to_complement


def reinitialize(field: ScalarField) -> ScalarField:
    """Rebuild a field as the signed distance to its zero sublevel set."""
    return ScalarField(field.grid, _signed_distance_values(field.grid, field.values))


def dilate(field2d: ScalarField, radius: float) -> ScalarField:
    """Grow the zero sublevel set of a position-plane field by ``radius``.

    Output sublevel set = {p : dist(p, input sublevel set) <= radius}.
    Reinitializes to signed distance first, so dilate(f, 0) doubles as the
    reinitialization primitive.
    """
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    if field2d.grid.ndim != 2:
        raise ValueError("dilate expects a field over the two position dimensions")
    sd = _signed_distance_values(field2d.grid, field2d.values)
    return ScalarField(field2d.grid, sd - radius)


def minkowski_sum_translate(kernel: ScalarField, center, out_grid: Grid) -> ScalarField:
    """Place a kernel's projected footprint at a reference state.

    ``kernel`` is an implicit surface over tracking-error coordinates
    (e_x, e_y[, e_theta]); its position projection is rebuilt as a signed
    distance, rotated by the reference heading, translated to the reference
    position, and resampled onto ``out_grid`` (a position-plane grid).
    """
    center = np.asarray(center, dtype=float)
    if kernel.grid.ndim > 2:
        kernel = project_min(kernel, (0, 1))
    if not (kernel.values <= 0.0).any():
        raise ValueError("kernel sublevel set is empty")
    if out_grid.ndim != 2:
        raise ValueError("output grid must cover exactly the position dimensions")
    sd = reinitialize(kernel)
    theta = center[2] if center.size > 2 else 0.0
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    px, py = np.meshgrid(*out_grid.coords, indexing="ij")
    # rotate the query into the reference frame: e = R(-theta) (p - p_r)
    rx = px - center[0]
    ry = py - center[1]
    ex = cos_t * rx + sin_t * ry
    ey = -sin_t * rx + cos_t * ry
    queries = np.stack([ex, ey], axis=-1)
    vals = _interpolate_with_gap(sd.grid, sd.values, queries)
    return ScalarField(out_grid, vals)


def broadcast_position_field(field2d: ScalarField, grid: Grid) -> np.ndarray:
    """View of a position-plane field broadcast over the remaining dims."""
    if field2d.grid != grid.subgrid((0, 1)):
        raise GridMismatchError("position field does not match the grid's first two dims")
    shape = field2d.values.shape + (1,) * (grid.ndim - 2)
    return np.broadcast_to(field2d.values.reshape(shape), grid.shape)


def _interpolate_single(grid: Grid, values: np.ndarray, pt) -> float:
    """Scalar fast path of :func:`interpolate` for one query point."""
    base = []
    frac = []
    for d in range(grid.ndim):
        n = grid.counts[d]
        u = (float(pt[d]) - grid.lo[d]) / grid.spacing[d]
        if grid.periodic[d]:
            i0 = math.floor(u)
            f = u - i0
            i0 %= n
        else:
            u = min(max(u, 0.0), n - 1.0)
            i0 = min(int(u), n - 2)
            f = u - i0
        base.append(i0)
        frac.append(f)
    out = 0.0
    for corner in range(1 << grid.ndim):
        w = 1.0
        idx = []
        for d in range(grid.ndim):
            if corner >> d & 1:
                i = base[d] + 1
                if grid.periodic[d] and i == grid.counts[d]:
                    i = 0
                idx.append(i)
                w *= frac[d]
            else:
                idx.append(base[d])
                w *= 1.0 - frac[d]
        if w:
            out += w * float(values[tuple(idx)])
    return out


def interpolate(grid: Grid, values: np.ndarray, points) -> np.ndarray:
    """Multilinear interpolation with periodic wrapping.

    Points outside a non-periodic dimension are clamped to the boundary.
    ``points`` has shape (..., ndim); returns shape (...,).
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        return np.float64(_interpolate_single(grid, values, pts))
    squeeze = pts.ndim == 1
    pts = np.atleast_2d(pts)
    lead_shape = pts.shape[:-1]
    pts = pts.reshape(-1, grid.ndim)

    idx0 = []
    idx1 = []
    frac = []
    for d in range(grid.ndim):
        x = pts[:, d]
        n = grid.counts[d]
        dx = grid.spacing[d]
        if grid.periodic[d]:
            u = (x - grid.lo[d]) / dx
            i0 = np.floor(u).astype(np.int64)
            f = u - i0
            i0 = np.mod(i0, n)
            i1 = np.mod(i0 + 1, n)
        else:
            u = np.clip((x - grid.lo[d]) / dx, 0.0, n - 1.0)
            i0 = np.minimum(np.floor(u).astype(np.int64), n - 2)
            f = u - i0
            i1 = i0 + 1
        idx0.append(i0)
        idx1.append(i1)
        frac.append(f)

    out = np.zeros(pts.shape[0])
    for corner in range(1 << grid.ndim):
        ind = []
        w = np.ones(pts.shape[0])
        for d in range(grid.ndim):
            if corner >> d & 1:
                ind.append(idx1[d])
                w = w * frac[d]
            else:
                ind.append(idx0[d])
                w = w * (1.0 - frac[d])
        out += w * values[tuple(ind)]
    out = out.reshape(lead_shape)
    return out[0] if squeeze else out


def _interpolate_with_gap(grid: Grid, values: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Interpolate a signed-distance field, adding the Euclidean distance by
    which a query falls outside the (non-periodic) grid bounds."""
    pts = np.asarray(points, dtype=float)
    clamped = pts.copy()
    gap_sq = np.zeros(pts.shape[:-1])
    for d in range(grid.ndim):
        if grid.periodic[d]:
            continue
        c = np.clip(pts[..., d], grid.lo[d], grid.hi[d])
        gap_sq += (pts[..., d] - c) ** 2
        clamped[..., d] = c
    return interpolate(grid, values, clamped) + np.sqrt(gap_sq)


def central_gradient(grid: Grid, values: np.ndarray) -> list[np.ndarray]:
    """Central-difference gradient; periodic dims wrap, boundaries one-sided."""
    out = []
    for d in range(grid.ndim):
        dx = grid.spacing[d]
        if grid.periodic[d]:
            g = (np.roll(values, -1, axis=d) - np.roll(values, 1, axis=d)) / (2 * dx)
        else:
            g = np.empty_like(values)
            sl = [slice(None)] * grid.ndim

            def at(i):
                s = list(sl)
                s[d] = i
                return tuple(s)

            g[at(slice(1, -1))] = (
                values[at(slice(2, None))] - values[at(slice(None, -2))]
            ) / (2 * dx)
            g[at(0)] = (values[at(1)] - values[at(0)]) / dx
            g[at(-1)] = (values[at(-1)] - values[at(-2)]) / dx
        out.append(g)
    return out


class TimeIndexedField:
    """A scalar field per time stamp, all on one grid, stamps increasing."""

    def __init__(self, times, fields: list[ScalarField]):
        times = np.asarray(times, dtype=float)
        if times.ndim != 1 or times.size != len(fields):
            raise ValueError("times and fields length mismatch")
        if times.size == 0:
            raise ValueError("empty time-indexed field")
        if not np.all(np.diff(times) > 0):
            raise ValueError("time stamps must be strictly increasing")
        grid = fields[0].grid
        for f in fields:
            if f.grid != grid:
                raise GridMismatchError("all fields must share one grid")
        self.times = times
        self.times.flags.writeable = False
        self.fields = list(fields)
        self.grid = grid
        self._grad_cache: dict[int, list[np.ndarray]] = {}

    def __len__(self) -> int:
        return len(self.fields)

    @property
    def t_min(self) -> float:
        return float(self.times[0])

    @property
    def t_max(self) -> float:
        return float(self.times[-1])

    def covers(self, t0: float, t1: float, slack: float = 1e-9) -> bool:
        return self.t_min - slack <= t0 and t1 <= self.t_max + slack

    def _bracket(self, t: float) -> tuple[int, int, float]:
        """Snapshot indices (k0, k1) bracketing t and the blend weight."""
        if t <= self.times[0]:
            return 0, 0, 0.0
        if t >= self.times[-1]:
            n = len(self.fields) - 1
            return n, n, 0.0
        k1 = int(np.searchsorted(self.times, t, side="right"))
        k0 = k1 - 1
        w = (t - self.times[k0]) / (self.times[k1] - self.times[k0])
        return k0, k1, float(w)

    def sample(self, t: float) -> np.ndarray:
        """Values at time t, linear in t, clamped to the covered span."""
        k0, k1, w = self._bracket(t)
        if k0 == k1:
            return self.fields[k0].values
        return (1.0 - w) * self.fields[k0].values + w * self.fields[k1].values

    def value_at(self, t: float, x) -> np.ndarray:
        """Interpolated value, linear in t and multilinear in x."""
        k0, k1, w = self._bracket(t)
        v0 = interpolate(self.grid, self.fields[k0].values, x)
        if k0 == k1:
            return v0
        v1 = interpolate(self.grid, self.fields[k1].values, x)
        return (1.0 - w) * v0 + w * v1

    def _snapshot_gradient(self, k: int) -> list[np.ndarray]:
        if k not in self._grad_cache:
            self._grad_cache[k] = central_gradient(self.grid, self.fields[k].values)
        return self._grad_cache[k]

    def gradient_at(self, t: float, x) -> np.ndarray:
        """Interpolated spatial gradient; shape (..., ndim)."""
        k0, k1, w = self._bracket(t)
        g0 = self._snapshot_gradient(k0)
        x = np.asarray(x, dtype=float)
        comps = []
        for d in range(self.grid.ndim):
            c0 = interpolate(self.grid, g0[d], x)
            if k0 == k1:
                comps.append(c0)
            else:
                c1 = interpolate(self.grid, self._snapshot_gradient(k1)[d], x)
                comps.append((1.0 - w) * c0 + w * c1)
        return np.stack(comps, axis=-1)

    def gradient_on_grid(self, t: float) -> list[np.ndarray]:
        """Per-dimension gradient arrays on the full grid at time t."""
        k0, k1, w = self._bracket(t)
        g0 = self._snapshot_gradient(k0)
        if k0 == k1:
            return g0
        g1 = self._snapshot_gradient(k1)
        return [(1.0 - w) * a + w * b for a, b in zip(g0, g1)]


# --- serialization -----------------------------------------------------------
#
# One field per file: a single ASCII header line, then the raw little-endian
# float64 node values in C order.


def _header(grid: Grid) -> str:
    counts = ",".join(str(c) for c in grid.counts)
    bounds = ",".join(f"{lo!r}:{hi!r}" for lo, hi in zip(grid.lo, grid.hi))
    periodic = ",".join("1" if p else "0" for p in grid.periodic)
    return f"dims={grid.ndim} counts={counts} bounds={bounds} periodic={periodic}\n"


def write_field(field: ScalarField, path):
    with open(path, "wb") as fh:
        fh.write(_header(field.grid).encode("ascii"))
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def read_field(path) -> ScalarField:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").strip()
        raw = fh.read()
    parts = dict(item.split("=", 1) for item in header.split())
    ndim = int(parts["dims"])
    counts = tuple(int(c) for c in parts["counts"].split(","))
    bounds = []
    for chunk in parts["bounds"].split(","):
        lo, hi = chunk.split(":")
        bounds.append((float(lo), float(hi)))
    periodic = tuple(c == "1" for c in parts["periodic"].split(","))
    if len(counts) != ndim or len(bounds) != ndim:
        raise ValueError(f"corrupt field header: {header}")
    grid = make_grid(bounds, counts, periodic)
    values = np.frombuffer(raw, dtype="<f8").reshape(counts)
    return ScalarField(grid, values)

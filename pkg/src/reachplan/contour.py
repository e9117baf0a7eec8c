"""Zero-level contour extraction on position-plane fields (marching squares)."""

import numpy as np

from .grid import Grid


def _edge_point(grid: Grid, i0, j0, i1, j1, v0, v1):
    """Linear zero crossing between two adjacent nodes."""
    f = v0 / (v0 - v1)
    x = grid.coords[0][i0] + f * (grid.coords[0][i1] - grid.coords[0][i0])
    y = grid.coords[1][j0] + f * (grid.coords[1][j1] - grid.coords[1][j0])
    return (float(x), float(y))


def _cell_segments(grid: Grid, values: np.ndarray, i: int, j: int, level: float):
    """Zero-level segments inside one grid cell, as point pairs."""
    v = [
        values[i, j] - level,
        values[i + 1, j] - level,
        values[i + 1, j + 1] - level,
        values[i, j + 1] - level,
    ]
    corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)]
    # nodes with value exactly zero count as inside
    code = sum(1 << k for k in range(4) if v[k] <= 0.0)
    if code in (0, 15):
        return []

    def cross(a, b):
        (ia, ja), (ib, jb) = corners[a], corners[b]
        return _edge_point(grid, ia, ja, ib, jb, v[a], v[b])

    edges = {0: (0, 1), 1: (1, 2), 2: (2, 3), 3: (3, 0)}
    crossings = [
        e for e, (a, b) in edges.items() if (v[a] <= 0.0) != (v[b] <= 0.0)
    ]
    if len(crossings) == 2:
        a, b = crossings
        return [(cross(*edges[a]), cross(*edges[b]))]
    if len(crossings) == 4:
        # saddle: disambiguate with the cell-center value
        center = 0.25 * sum(v)
        if (center <= 0.0) == (v[0] <= 0.0):
            pairing = [(0, 1), (2, 3)]
        else:
            pairing = [(0, 3), (1, 2)]
        return [
            (cross(*edges[a]), cross(*edges[b])) for a, b in pairing
        ]
    return []


def marching_squares(grid: Grid, values: np.ndarray, level: float = 0.0) -> list[np.ndarray]:
    """Ordered zero-level polylines of a 2D field.

    Returns a list of (M, 2) arrays; closed loops repeat their first point.
    """
    if grid.ndim != 2:
        raise ValueError("marching squares requires a 2D field")
    segments = []
    for i in range(grid.counts[0] - 1):
        for j in range(grid.counts[1] - 1):
            segments.extend(_cell_segments(grid, values, i, j, level))
    return _chain(segments)


def _key(p, tol=1e-9):
    return (round(p[0] / tol), round(p[1] / tol))


def _chain(segments) -> list[np.ndarray]:
    """Join segments that share endpoints into polylines."""
    adjacency: dict[tuple, list] = {}
    for s, (a, b) in enumerate(segments):
        adjacency.setdefault(_key(a), []).append((s, 0))
        adjacency.setdefault(_key(b), []).append((s, 1))
    used = [False] * len(segments)
    lines = []
    for start in range(len(segments)):
        if used[start]:
            continue
        used[start] = True
        a, b = segments[start]
        line = [a, b]
        # extend forward from b, then backward from a
        for tail in (True, False):
            while True:
                tip = line[-1] if tail else line[0]
                hit = None
                for s, end in adjacency.get(_key(tip), []):
                    if not used[s]:
                        hit = (s, end)
                        break
                if hit is None:
                    break
                s, end = hit
                used[s] = True
                nxt = segments[s][1 - end]
                if tail:
                    line.append(nxt)
                else:
                    line.insert(0, nxt)
        lines.append(np.array(line))
    return lines

"""Occupancy grid memory and grid-search global planning."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geometry import DepthScan, Pose2D, Rect

UNKNOWN, FREE, OCCUPIED = -1, 0, 1


class Unreachable(Exception):
    """No collision-free grid path joins start and goal."""


class OccupancyGrid:
    """Cells indexed [ix, iy]; cell (0, 0) has its lower-left corner at the
    bounds' minimum corner. Occupied cells are sticky: a later beam passing
    through never clears them (the worlds here are static)."""

    def __init__(self, bounds: Rect, resolution: float = 0.1):
        xmin, ymin, xmax, ymax = bounds
        self.bounds = bounds
        self.resolution = resolution
        self.origin = np.array([xmin, ymin])
        self.shape = (max(1, math.ceil((xmax - xmin) / resolution - 1e-9)),
                      max(1, math.ceil((ymax - ymin) / resolution - 1e-9)))
        self.cells = np.full(self.shape, UNKNOWN, dtype=np.int8)
        self.hits = np.full(self.shape + (2,), np.nan)  # latest beam endpoint seen in each cell

    def copy(self) -> OccupancyGrid:
        g = OccupancyGrid.__new__(OccupancyGrid)
        g.bounds, g.resolution, g.origin, g.shape = self.bounds, self.resolution, self.origin, self.shape
        g.cells = self.cells.copy()
        g.hits = self.hits.copy()
        return g

    def index_of(self, points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(ix, iy, inside) for world points; points on the far edge map inward."""
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        idx = np.floor((p - self.origin) / self.resolution).astype(int)
        xmin, ymin, xmax, ymax = self.bounds
        inside = (p[:, 0] >= xmin) & (p[:, 0] <= xmax) & (p[:, 1] >= ymin) & (p[:, 1] <= ymax)
        ix = np.clip(idx[:, 0], 0, self.shape[0] - 1)
        iy = np.clip(idx[:, 1], 0, self.shape[1] - 1)
        return ix, iy, inside

    def centers(self, ix, iy) -> np.ndarray:
        return self.origin + (np.column_stack([ix, iy]) + 0.5) * self.resolution

    def occupied_points(self) -> np.ndarray:
        ix, iy = np.nonzero(self.cells == OCCUPIED)
        return self.centers(ix, iy)

    def surface_points(self) -> tuple[np.ndarray, np.ndarray]:
        """Occupied cells split into (recorded hit points, centers of cells
        marked without one). Hit points locate the surface to sub-cell accuracy."""
        occ = self.cells == OCCUPIED
        has_hit = occ & ~np.isnan(self.hits[..., 0])
        bare = occ & ~has_hit
        return self.hits[has_hit], self.centers(*np.nonzero(bare))

    def mark_occupied(self, points, record_hits: bool = False) -> None:
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        ix, iy, inside = self.index_of(p)
        self.cells[ix[inside], iy[inside]] = OCCUPIED
        if record_hits:
            self.hits[ix[inside], iy[inside]] = p[inside]

    def __eq__(self, other):
        return isinstance(other, OccupancyGrid) and self.bounds == other.bounds and np.array_equal(self.cells, other.cells)


def update_occupancy(grid: OccupancyGrid, pose: Pose2D, scan: DepthScan) -> OccupancyGrid:
    """Carve free space along every beam and mark hit cells occupied (in place)."""
    cfg = scan.config
    res = grid.resolution
    angles = pose.heading + cfg.beam_angles
    dirs = np.column_stack([np.cos(angles), np.sin(angles)])
    ranges = scan.ranges

    free_len = ranges - res
    steps = np.arange(0.0, max(free_len.max(), 0.0) + 1e-12, res / 2.0)
    if len(steps):
        along = steps[None, :]
        keep = along <= free_len[:, None]
        pts = pose.position + (along[..., None] * dirs[:, None, :])
        ix, iy, inside = grid.index_of(pts[keep])
        ix, iy = ix[inside], iy[inside]
        not_occ = grid.cells[ix, iy] != OCCUPIED
        grid.cells[ix[not_occ], iy[not_occ]] = FREE

    hits = ranges < cfg.max_range
    if hits.any():
        grid.mark_occupied(pose.position + ranges[hits, None] * dirs[hits], record_hits=True)
    return grid


# global planning -----------------------------------------------------------


@dataclass(frozen=True)
class GlobalPath:
    points: np.ndarray  # (P, 2)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "points", pts)
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        object.__setattr__(self, "_cum", np.concatenate([[0.0], np.cumsum(seg)]))

    def __len__(self):
        return len(self.points)

    @property
    def length(self) -> float:
        return float(self._cum[-1])

    def project(self, points):
        """Nearest path point, its arc position and the tangent heading there."""
        q = np.asarray(points, dtype=float).reshape(-1, 2)
        pts = self.points
        if len(pts) == 1:
            n = len(q)
            return np.repeat(pts, n, axis=0), np.zeros(n), np.zeros(n)
        a = pts[:-1]
        seg = pts[1:] - a
        len2 = np.maximum(np.sum(seg * seg, axis=1), 1e-18)
        u = np.clip(np.einsum("qsk,sk->qs", q[:, None, :] - a[None], seg) / len2, 0.0, 1.0)
        near = a[None] + u[..., None] * seg[None]
        d2 = np.sum((near - q[:, None, :]) ** 2, axis=-1)
        best = np.argmin(d2, axis=1)
        rows = np.arange(len(q))
        nearest = near[rows, best]
        s = self._cum[best] + u[rows, best] * np.sqrt(len2[best])
        tangent = np.arctan2(seg[best, 1], seg[best, 0])
        return nearest, s, tangent

    def point_at(self, s: float) -> np.ndarray:
        s = float(np.clip(s, 0.0, self.length))
        i = int(np.searchsorted(self._cum, s, side="right") - 1)
        if i >= len(self.points) - 1:
            return self.points[-1].copy()
        seg_len = self._cum[i + 1] - self._cum[i]
        u = 0.0 if seg_len == 0 else (s - self._cum[i]) / seg_len
        return self.points[i] + u * (self.points[i + 1] - self.points[i])


def blocked_cells(grid: OccupancyGrid, robot_radius: float) -> np.ndarray:
    """Occupied cells inflated by the robot radius, plus a wall margin."""
    res = grid.resolution
    occ = grid.cells == OCCUPIED
    if occ.any():
        dist = ndimage.distance_transform_edt(~occ, sampling=res)
        blocked = dist < robot_radius + res / 2.0
    else:
        blocked = np.zeros(grid.shape, dtype=bool)
    ix = np.arange(grid.shape[0])
    iy = np.arange(grid.shape[1])
    cx = grid.origin[0] + (ix + 0.5) * res
    cy = grid.origin[1] + (iy + 0.5) * res
    xmin, ymin, xmax, ymax = grid.bounds
    wall_x = np.minimum(cx - xmin, xmax - cx) < robot_radius
    wall_y = np.minimum(cy - ymin, ymax - cy) < robot_radius
    return blocked | wall_x[:, None] | wall_y[None, :]


_MOVES = [(1, 0, 1.0), (-1, 0, 1.0), (0, 1, 1.0), (0, -1, 1.0),
          (1, 1, math.sqrt(2)), (1, -1, math.sqrt(2)), (-1, 1, math.sqrt(2)), (-1, -1, math.sqrt(2))]


def _astar(blocked: np.ndarray, start: tuple[int, int], goal: tuple[int, int]) -> list[tuple[int, int]]:
    nx, ny = blocked.shape
    gx, gy = goal

    def h(x, y):
        dx, dy = abs(x - gx), abs(y - gy)
        return max(dx, dy) + (math.sqrt(2) - 1) * min(dx, dy)

    g = np.full(blocked.shape, np.inf)
    parent = {}
    g[start] = 0.0
    heap = [(h(*start), 0.0, start)]
    closed = np.zeros(blocked.shape, dtype=bool)
    while heap:
        _, cost, node = heapq.heappop(heap)
        if closed[node]:
            continue
        if node == goal:
            path = [node]
            while path[-1] != start:
                path.append(parent[path[-1]])
            return path[::-1]
        closed[node] = True
        x, y = node
        for dx, dy, step in _MOVES:
            u, v = x + dx, y + dy
            if not (0 <= u < nx and 0 <= v < ny) or blocked[u, v] or closed[u, v]:
                continue
            if dx and dy and (blocked[x + dx, y] or blocked[x, y + dy]):
                continue  # no corner cutting
            c = cost + step
            if c < g[u, v]:
                g[u, v] = c
                parent[(u, v)] = node
                heapq.heappush(heap, (c + h(u, v), c, (u, v)))
    raise Unreachable(f"no grid path from cell {start} to cell {goal}")


def _line_clear(grid: OccupancyGrid, blocked: np.ndarray, a: np.ndarray, b: np.ndarray) -> bool:
    n = max(2, int(math.ceil(np.linalg.norm(b - a) / (grid.resolution / 4.0))) + 1)
    pts = a + np.linspace(0.0, 1.0, n)[:, None] * (b - a)
    ix, iy, _ = grid.index_of(pts)
    return not blocked[ix, iy].any()


def shortcut(grid: OccupancyGrid, blocked: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Greedy line-of-sight smoothing: jump to the farthest visible waypoint."""
    out = [points[0]]
    i = 0
    while i < len(points) - 1:
        j = len(points) - 1
        while j > i + 1 and not _line_clear(grid, blocked, points[i], points[j]):
            j -= 1
        out.append(points[j])
        i = j
    return np.array(out)


def plan_global(grid: OccupancyGrid, start, goal, robot_radius: float = 0.18) -> GlobalPath:
    """Shortest 8-connected path (unknown treated as free), then shortcut.

    Raises Unreachable when the inflated obstacles separate start and goal.
    """
    start = np.asarray(start, dtype=float)[:2]
    goal = np.asarray(goal, dtype=float)[:2]
    blocked = blocked_cells(grid, robot_radius)
    sx, sy, _ = grid.index_of(start)
    gx, gy, _ = grid.index_of(goal)
    s_cell, g_cell = (int(sx[0]), int(sy[0])), (int(gx[0]), int(gy[0]))

    # let the robot leave an inflated zone it is already standing in
    if blocked[s_cell]:
        ix = np.arange(grid.shape[0])[:, None]
        iy = np.arange(grid.shape[1])[None, :]
        near = np.hypot(ix - s_cell[0], iy - s_cell[1]) * grid.resolution <= robot_radius + grid.resolution
        blocked = blocked & ~(near & (grid.cells != OCCUPIED))
    if blocked[g_cell]:
        raise Unreachable(f"goal cell {g_cell} is blocked")

    cells = _astar(blocked, s_cell, g_cell)
    pts = grid.centers(*np.array(cells).T)
    pts[0], pts[-1] = start, goal
    if len(pts) == 1:
        pts = np.array([start, goal])
    return GlobalPath(shortcut(grid, blocked, pts))

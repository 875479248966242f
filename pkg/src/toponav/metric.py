"""Global log-odds occupancy mapping and full-grid planning (the metric baseline)."""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

from . import _kernels
from .geometry import FREE, OCCUPIED, UNKNOWN, OccupancyGrid, Pose2D, Scan2D
from .planning import LocalPath, PlanConfig, theta_star, traversable

L_FREE = -0.4
L_OCC = 0.85
L_CLAMP = 10.0
L_THRESHOLD = 0.5


class GlobalMetricMap:
    """Log-odds raster in the odometry frame; bounds grow to cover each scan.

    Cell (row, col) has its center at ``(ox + col * res, oy + row * res)``
    and the origin is kept on a multiple of the resolution.
    """

    def __init__(self, resolution: float = 0.1, l_free: float = L_FREE, l_occ: float = L_OCC,
                 clamp: float = L_CLAMP, threshold: float = L_THRESHOLD):
        if not resolution > 0:
            raise ValueError("resolution must be positive")
        self.resolution = float(resolution)
        self.l_free, self.l_occ, self.clamp, self.threshold = l_free, l_occ, clamp, threshold
        # lattice index of cell (0, 0); the map starts as a single unknown cell at the frame origin
        self._c0 = 0
        self._r0 = 0
        self.log_odds = np.zeros((1, 1))

    @property
    def origin(self) -> Pose2D:
        return Pose2D(self._c0 * self.resolution, self._r0 * self.resolution, 0.0)

    @property
    def shape(self) -> tuple[int, int]:
        return self.log_odds.shape

    def _grow(self, c_lo: int, r_lo: int, c_hi: int, r_hi: int) -> None:
        h, w = self.log_odds.shape
        nc0, nr0 = min(self._c0, c_lo), min(self._r0, r_lo)
        nc1, nr1 = max(self._c0 + w - 1, c_hi), max(self._r0 + h - 1, r_hi)
        if (nc0, nr0, nc1, nr1) == (self._c0, self._r0, self._c0 + w - 1, self._r0 + h - 1):
            return
        grown = np.zeros((nr1 - nr0 + 1, nc1 - nc0 + 1))
        grown[self._r0 - nr0 : self._r0 - nr0 + h, self._c0 - nc0 : self._c0 - nc0 + w] = self.log_odds
        self.log_odds = grown
        self._c0, self._r0 = nc0, nr0

    def to_grid(self) -> OccupancyGrid:
        cells = np.full(self.log_odds.shape, UNKNOWN, dtype=np.uint8)
        cells[self.log_odds < -self.threshold] = FREE
        cells[self.log_odds > self.threshold] = OCCUPIED
        return OccupancyGrid(self.resolution, self.origin, cells)

    def save(self, path) -> int:
        return self.to_grid().save(path)


def integrate_scan(m: GlobalMetricMap, pose: Pose2D, scan: Scan2D) -> None:
    """Fuse one scan taken at ``pose``: rays decrement, endpoints increment."""
    if len(scan) == 0:
        return
    res = m.resolution
    pts = pose.apply(scan.points) / res
    sx, sy = pose.x / res, pose.y / res
    lo = np.floor(np.minimum(pts.min(axis=0), [sx, sy]) + 0.5).astype(int)
    hi = np.floor(np.maximum(pts.max(axis=0), [sx, sy]) + 0.5).astype(int)
    m._grow(int(lo[0]), int(lo[1]), int(hi[0]), int(hi[1]))
    # work on the sub-window the scan touches
    c0, r0 = int(lo[0]) - m._c0, int(lo[1]) - m._r0
    h, w = int(hi[1] - lo[1] + 1), int(hi[0] - lo[0] + 1)
    ends = pts - lo
    free_hits, occ_hits = _kernels.ray_cells(h, w, sx - lo[0], sy - lo[1], ends)
    win = m.log_odds[r0 : r0 + h, c0 : c0 + w]
    win += m.l_free * free_hits + m.l_occ * occ_hits
    np.clip(win, -m.clamp, m.clamp, out=win)


def plan_metric(m: GlobalMetricMap, start: Pose2D, goal: Pose2D, config: PlanConfig = PlanConfig()) -> LocalPath:
    """Theta* over the whole thresholded map, in map coordinates."""
    grid = m.to_grid()
    return theta_star(traversable(grid, config.inflation_radius), grid, (start.x, start.y), (goal.x, goal.y))


def metric_map_bytes(m: GlobalMetricMap) -> int:
    return len(m.to_grid().to_text().encode())


def wall_separation(a: OccupancyGrid, b: OccupancyGrid, box) -> float:
    """Symmetric mean distance, in cells, between the occupied cells of a and b.

    Only cells inside ``box`` = (x0, y0, x1, y1) count. Both grids must
    share resolution and lattice. Returns inf when either side has no wall
    there.
    """
    ca = _occupied_points(a, box)
    cb = _occupied_points(b, box)
    if len(ca) == 0 or len(cb) == 0:
        return math.inf
    return 0.5 * (_mean_nearest(ca, cb) + _mean_nearest(cb, ca))


def _mean_nearest(src: np.ndarray, dst: np.ndarray) -> float:
    """Mean distance from each point of src to the nearest point of dst."""
    lo = np.minimum(src.min(axis=0), dst.min(axis=0)) - 1
    hi = np.maximum(src.max(axis=0), dst.max(axis=0)) + 1
    mask = np.ones(tuple((hi - lo + 1)[::-1]), dtype=bool)
    idst = dst - lo
    mask[idst[:, 1], idst[:, 0]] = False
    d = ndimage.distance_transform_edt(mask)
    isrc = src - lo
    return float(d[isrc[:, 1], isrc[:, 0]].mean())


def _occupied_points(g: OccupancyGrid, box) -> np.ndarray:
    x0, y0, x1, y1 = box
    rows, cols = np.nonzero(g.cells == OCCUPIED)
    x, y = g.index_to_coord(cols, rows)
    keep = (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)
    return np.round(np.column_stack([x[keep], y[keep]]) / g.resolution).astype(int)

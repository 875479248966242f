"""Scan rasterization, place-recognition descriptors, scan matching and overlap."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage

from . import _kernels
from .geometry import FREE, IDENTITY, OCCUPIED, UNKNOWN, OccupancyGrid, Pose2D, Scan2D, compose, inverse


def scan_to_grid(scan: Scan2D, sensor_pose_in_grid: Pose2D = IDENTITY, resolution: float = 0.1,
                 extent: float | None = None) -> OccupancyGrid:
    """Rasterize a scan: rays free, endpoints occupied, the rest unknown.

    The grid is axis-aligned in its reference frame, with cell centers on
    multiples of ``resolution``, and covers the bounding box of the sensor
    and its returns plus a one-cell margin. ``extent`` additionally crops
    it to a square of that half-width around the sensor; rays are still
    traced in full before cropping.
    """
    if not resolution > 0:
        raise ValueError("resolution must be positive")
    pts = sensor_pose_in_grid.apply(scan.points)
    sx, sy = sensor_pose_in_grid.x, sensor_pose_in_grid.y
    xs = np.append(pts[:, 0], sx)
    ys = np.append(pts[:, 1], sy)
    c0 = int(math.floor(xs.min() / resolution + 0.5)) - 1
    r0 = int(math.floor(ys.min() / resolution + 0.5)) - 1
    c1 = int(math.floor(xs.max() / resolution + 0.5)) + 1
    r1 = int(math.floor(ys.max() / resolution + 0.5)) + 1
    cells = np.full((r1 - r0 + 1, c1 - c0 + 1), UNKNOWN, dtype=np.uint8)
    if len(pts):
        ends = np.column_stack([pts[:, 0] / resolution - c0, pts[:, 1] / resolution - r0])
        _kernels.rasterize_rays(cells, sx / resolution - c0, sy / resolution - r0, ends, FREE, OCCUPIED)
    if extent is not None:
        k = int(math.floor(extent / resolution + 1e-9))
        scx = int(math.floor(sx / resolution + 0.5))
        scy = int(math.floor(sy / resolution + 0.5))
        nc0, nc1 = max(c0, scx - k), min(c1, scx + k)
        nr0, nr1 = max(r0, scy - k), min(r1, scy + k)
        cells = cells[nr0 - r0 : nr1 - r0 + 1, nc0 - c0 : nc1 - c0 + 1]
        c0, r0 = nc0, nr0
    return OccupancyGrid(resolution, Pose2D(c0 * resolution, r0 * resolution, 0.0), cells)


# ------------------------------------------------------------------ descriptors


@dataclass(frozen=True, eq=False)
class Descriptor:
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float).ravel()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.values)

    def distance(self, other: "Descriptor") -> float:
        return float(np.linalg.norm(self.values - other.values))


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n == 0:
        return np.full(len(v), 1.0 / math.sqrt(len(v)))
    return v / n


def compute_descriptor(scan: Scan2D, dim: int = 64) -> Descriptor:
    """Rotation-invariant place signature of a scan.

    The first half is a histogram of return ranges over ``dim/2`` rings.
    The second half is the normalized circular autocorrelation, at lags
    1..dim/2, of a kernel-smoothed polar range profile sampled at ``dim``
    bearings; rotating the scan shifts the profile, which leaves its
    autocorrelation unchanged.
    """
    if dim < 2 or dim % 2:
        raise ValueError("descriptor dimension must be a positive even number")
    half = dim // 2
    if len(scan) == 0:
        return Descriptor(np.full(dim, 1.0 / math.sqrt(dim)))
    r = scan.ranges()
    rings, _ = np.histogram(r, bins=half, range=(0.0, scan.max_range))
    rings = _unit(rings.astype(float))

    phi = np.arctan2(scan.points[:, 1], scan.points[:, 0])
    samples = np.arange(dim) * (2 * math.pi / dim)
    spacing = 2 * math.pi / dim
    kappa = 1.0 / (1.5 * spacing) ** 2
    w = np.exp(kappa * (np.cos(samples[:, None] - phi[None, :]) - 1.0))
    eps = 1e-3
    profile = (w @ r + eps * scan.max_range) / (w.sum(axis=1) + eps)
    centered = profile - profile.mean()
    ac0 = float(centered @ centered)
    if ac0 <= 1e-12:
        auto = np.zeros(half)
    else:
        auto = np.array([centered @ np.roll(centered, -lag) for lag in range(1, half + 1)]) / ac0
    auto = _unit(auto)
    # 7 decimals keep the stored text short while the norm stays within 1e-6
    return Descriptor(np.round(np.concatenate([rings, auto]) / math.sqrt(2.0), 7))


# ------------------------------------------------------------------ matching


class NoMatch(Exception):
    """Best correlation score fell below the acceptance threshold."""

    def __init__(self, score: float, threshold: float):
        super().__init__(f"best score {score:.3f} below threshold {threshold:.3f}")
        self.score = score


@dataclass(frozen=True)
class MatchConfig:
    window_xy: float = 3.0
    window_theta: float = math.pi
    step_xy: float = 0.1
    step_theta: float = math.radians(2.0)
    score_threshold: float = 0.55
    coarse_factor: int = 3
    top_k: int = 10
    sigma: float = 0.1
    max_points: int = 360
    coarse_points: int = 90
    # returns farther than this from any reference wall, in reference free space, count against the score
    clear_distance: float = 0.3
    # score only the returns that land where the reference has observed something, so
    # a grid cropped around its own sensor does not penalize a query taken near its edge
    inside_only: bool = False


@dataclass(frozen=True)
class MatchResult:
    """``rel_pose`` is the reference frame expressed in the query frame.

    Equivalently, ``transform_scan(reference, rel_pose)`` lands on the
    query, and the query sensor sits at ``inverse(rel_pose)`` in the
    reference frame.
    """

    rel_pose: Pose2D
    score: float


@lru_cache(maxsize=64)
def _likelihood(grid: OccupancyGrid, sigma: float, step: float, pool: int):
    """Smoothed hit likelihood on a lattice no coarser than ``step``.

    Occupied cell centers of a coarse grid are placed on a finer lattice
    sharing the grid's origin, so lookups resolve sub-cell offsets.
    Returns (likelihood, max-pooled likelihood, lattice resolution).
    """
    f = max(1, int(round(grid.resolution / step)))
    res = grid.resolution / f
    occ_c = grid.cells == OCCUPIED
    h, w = occ_c.shape
    occ = np.zeros(((h - 1) * f + 1 + 2 * f, (w - 1) * f + 1 + 2 * f), dtype=bool)
    rows, cols = np.nonzero(occ_c)
    occ[rows * f + f, cols * f + f] = True
    if not occ.any():
        lik = np.zeros(occ.shape)
    else:
        d = ndimage.distance_transform_edt(~occ) * res
        lik = np.exp(-0.5 * (d / sigma) ** 2)
    pooled = ndimage.maximum_filter(lik, size=pool, mode="constant", cval=0.0) if pool > 1 else lik
    # lattice is padded by f fine cells on each side
    return lik, pooled, res, f


def _as_grid(reference, resolution: float) -> OccupancyGrid:
    if isinstance(reference, OccupancyGrid):
        return reference
    return _scan_grid(reference, resolution)


@lru_cache(maxsize=16)
def _scan_grid(scan: Scan2D, resolution: float) -> OccupancyGrid:
    return scan_to_grid(scan, IDENTITY, resolution)


def _query_points(query: Scan2D, max_points: int) -> np.ndarray:
    pts = query.points
    if len(pts) > max_points:
        # deterministic, order-independent thinning: keep points by bearing rank
        order = np.lexsort((pts[:, 1], pts[:, 0], np.arctan2(pts[:, 1], pts[:, 0])))
        keep = order[np.linspace(0, len(pts) - 1, max_points).round().astype(int)]
        pts = pts[keep]
    return pts


def best_alignment(query: Scan2D, reference, config: MatchConfig = MatchConfig(),
                   prior: Pose2D = IDENTITY) -> MatchResult:
    """Correlative search without the acceptance threshold.

    ``prior`` is a guess for the result's ``rel_pose``; the window is
    centered on it. Among equal scores the pose closest to the window
    center wins (smallest |dtheta|, then |dx| + |dy|).
    """
    grid = _as_grid(reference, config.step_xy)
    if len(query) == 0:
        return MatchResult(prior, 0.0)
    cf = max(1, int(config.coarse_factor))
    pool = 2 * (cf // 2) + 1 + 2
    # the blur must absorb the reference quantization, half a cell either way
    sigma = max(float(config.sigma), 0.75 * grid.resolution)
    lik, pooled, res, pad = _likelihood(grid, sigma, float(config.step_xy), pool)
    lattice_origin = compose(grid.origin, Pose2D(-pad * res, -pad * res, 0.0))

    center = inverse(prior)  # query sensor pose in the reference frame
    pts = _query_points(query, config.max_points)
    coarse_pts = _query_points(query, config.coarse_points) / res
    # work in the lattice index frame: y = inverse(origin) * x
    to_idx = compose(inverse(lattice_origin), center)
    idx_pts = pts / res
    n_theta = int(math.floor(config.window_theta / config.step_theta + 1e-9))
    n_xy = int(math.floor(config.window_xy / config.step_xy + 1e-9))
    lo = -n_theta
    if n_theta * config.step_theta >= math.pi - 1e-9:
        lo += 1  # -pi and +pi are the same heading
    a_idx = np.arange(lo, n_theta + 1)
    a_set = set(a_idx.tolist())
    thetas = to_idx.theta + a_idx * config.step_theta

    rot = grid.origin.theta
    cr, sr = math.cos(rot), math.sin(rot)

    def offsets_for(ix, iy):
        # translation offsets (reference frame) -> index-frame translation
        dx = ix * config.step_xy
        dy = iy * config.step_xy
        ox = (cr * dx + sr * dy) / res + to_idx.x / res
        oy = (-sr * dx + cr * dy) / res + to_idx.y / res
        return np.column_stack([ox, oy])

    # rotation must be about the query sensor, so offsets are applied after
    # rotating the raw points; the kernel does exactly that.
    c_range = np.arange(-(n_xy // cf), n_xy // cf + 1) * cf
    cix, ciy = np.meshgrid(c_range, c_range, indexing="ij")
    cix, ciy = cix.ravel(), ciy.ravel()
    coarse = _kernels.correlate_poses(pooled, coarse_pts, thetas, offsets_for(cix, ciy))

    # rank coarse cells: best score first, then closest to the window center
    a_grid = np.repeat(np.abs(a_idx), len(cix))
    t_grid = np.tile(np.abs(cix) + np.abs(ciy), len(a_idx))
    flat = coarse.ravel()
    order = np.lexsort((t_grid, a_grid, -flat))[: config.top_k]

    best_key, best = None, None
    half = cf // 2 + 1
    fine_off = np.arange(-half, half + 1)
    for o in order:
        ai, ci = divmod(int(o), len(cix))
        a_c = a_idx[ai]
        a_fine = np.array([a for a in (a_c - 1, a_c, a_c + 1) if a in a_set])
        fx = np.clip(cix[ci] + fine_off, -n_xy, n_xy)
        fy = np.clip(ciy[ci] + fine_off, -n_xy, n_xy)
        fxx, fyy = np.meshgrid(np.unique(fx), np.unique(fy), indexing="ij")
        fxx, fyy = fxx.ravel(), fyy.ravel()
        sc = _kernels.correlate_poses(lik, idx_pts, to_idx.theta + a_fine * config.step_theta, offsets_for(fxx, fyy))
        for ia, a in enumerate(a_fine):
            for m in range(len(fxx)):
                key = (-sc[ia, m], abs(int(a)), abs(int(fxx[m])) + abs(int(fyy[m])), int(a), int(fxx[m]), int(fyy[m]))
                if best_key is None or key < best_key:
                    best_key, best = key, (sc[ia, m], int(a), int(fxx[m]), int(fyy[m]))
    score, a, ix, iy = best
    x_pose = Pose2D(center.x + ix * config.step_xy, center.y + iy * config.step_xy,
                    center.theta + a * config.step_theta)
    score *= 1.0 - _contradiction(grid, pts, x_pose, config.clear_distance)
    if config.inside_only:
        score /= max(_inside_fraction(grid, pts, x_pose), _MIN_INSIDE)
    return MatchResult(inverse(x_pose), float(min(1.0, max(0.0, score))))


_MIN_INSIDE = 0.25


def _inside_fraction(grid: OccupancyGrid, pts: np.ndarray, pose: Pose2D) -> float:
    """Fraction of returns landing on or next to a cell the reference has observed."""
    p = pose.apply(pts)
    col, row = grid.coord_to_index(p[:, 0], p[:, 1])
    inside = grid.in_bounds(col, row)
    known = _observed(grid)[row[inside], col[inside]]
    return float(np.count_nonzero(known)) / len(pts)


@lru_cache(maxsize=64)
def _observed(grid: OccupancyGrid) -> np.ndarray:
    return ndimage.binary_dilation(grid.cells != UNKNOWN, structure=np.ones((3, 3), dtype=bool))


@lru_cache(maxsize=64)
def _clearance(grid: OccupancyGrid) -> np.ndarray:
    """Distance (m) from each cell center to the nearest occupied cell center."""
    occ = grid.cells == OCCUPIED
    if not occ.any():
        return np.full(occ.shape, np.inf)
    return ndimage.distance_transform_edt(~occ) * grid.resolution


def _contradiction(grid: OccupancyGrid, pts: np.ndarray, pose: Pose2D, clear_distance: float) -> float:
    """Fraction of returns that land in the reference's open space.

    A return on a free cell well away from every occupied cell means the
    reference saw straight through the spot where the query hit something,
    which correlation alone cannot penalize.
    """
    if len(pts) == 0:
        return 0.0
    p = pose.apply(pts)
    col, row = grid.coord_to_index(p[:, 0], p[:, 1])
    inside = grid.in_bounds(col, row)
    r, c = row[inside], col[inside]
    clear = _clearance(grid)[r, c] >= max(clear_distance, 1.5 * grid.resolution) - 1e-9
    bad = (grid.cells[r, c] == FREE) & clear
    return float(np.count_nonzero(bad)) / len(pts)


def match_scans(query: Scan2D, reference, config: MatchConfig = MatchConfig(),
                prior: Pose2D = IDENTITY) -> MatchResult:
    """Align ``query`` to ``reference`` (a scan or an occupancy grid).

    Raises NoMatch when the best score is below ``config.score_threshold``.
    """
    result = best_alignment(query, reference, config, prior)
    if result.score < config.score_threshold:
        raise NoMatch(result.score, config.score_threshold)
    return result


# ------------------------------------------------------------------ overlap


@lru_cache(maxsize=16)
def free_ray_cells(scan: Scan2D, resolution: float) -> np.ndarray:
    """Centers (sensor frame) of cells the scan observes as free."""
    g = scan_to_grid(scan, IDENTITY, resolution)
    rows, cols = np.nonzero(g.cells == FREE)
    x, y = g.index_to_coord(cols, rows)
    out = np.column_stack([x, y])
    out.setflags(write=False)
    return out


def overlap(scan: Scan2D, location_grid: OccupancyGrid, pose_in_location: Pose2D,
            radius: float | None = None) -> float:
    """Fraction of the scan's free cells that fall on free cells of the location.

    With ``radius`` only free cells within that Chebyshev distance of the
    sensor count, matching a location grid cropped to the same extent.
    """
    if len(scan) == 0:
        return 0.0
    cells = free_ray_cells(scan, location_grid.resolution)
    if radius is not None:
        cells = cells[np.abs(cells).max(axis=1) <= radius + 1e-9]
    if len(cells) == 0:
        return 0.0
    p = pose_in_location.apply(cells)
    vals = location_grid.lookup(p[:, 0], p[:, 1])
    return float(np.count_nonzero(vals == FREE)) / len(cells)

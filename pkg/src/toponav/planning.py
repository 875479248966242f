"""Two-level planning: Dijkstra over the graph, local union grid, any-angle paths."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import _kernels
from .geometry import FREE, IDENTITY, OCCUPIED, UNKNOWN, OccupancyGrid, Pose2D, inverse, translation_norm
from .topomap import NavState, TopoEdge, TopoGraph, UnknownLocation

EDGE_EPSILON = 1e-6


class Unreachable(Exception):
    pass


class GoalUnreachable(Exception):
    pass


class StartInObstacle(Exception):
    pass


class InconsistentPath(ValueError):
    pass


@dataclass(frozen=True)
class GlobalPath:
    edges: tuple[TopoEdge, ...] = ()

    def __post_init__(self):
        edges = tuple(self.edges)
        for a, b in zip(edges, edges[1:]):
            if a.v != b.u:
                raise InconsistentPath(f"edge {a.u}->{a.v} is not followed by an edge from {a.v}")
        object.__setattr__(self, "edges", edges)

    def __len__(self):
        return len(self.edges)

    @property
    def vertices(self) -> list[int]:
        if not self.edges:
            return []
        return [self.edges[0].u] + [e.v for e in self.edges]

    @property
    def weight(self) -> float:
        total = 0.0
        for e in self.edges:
            total += edge_weight(e)
        return total


@dataclass(frozen=True)
class LocalPath:
    waypoints: tuple[tuple[float, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "waypoints", tuple((float(x), float(y)) for x, y in self.waypoints))

    def __len__(self):
        return len(self.waypoints)

    @property
    def length(self) -> float:
        return sum(math.dist(a, b) for a, b in zip(self.waypoints, self.waypoints[1:]))


@dataclass(frozen=True)
class PlanConfig:
    inflation_radius: float = 0.2
    # neighbour grids are clipped to this half-width around the current location
    local_window: float | None = 20.0


def edge_weight(edge: TopoEdge) -> float:
    return translation_norm(edge.t_uv) + EDGE_EPSILON


# ---------------------------------------------------------------- global


def plan_global(graph: TopoGraph, v_start: int, v_goal: int) -> GlobalPath:
    """Dijkstra over the location graph.

    Among equal-cost chains the lexicographically smallest vertex sequence
    wins; keying the heap on (cost, sequence) settles each vertex with that
    chain because extending two sequences by the same vertex keeps their order.
    """
    for v in (v_start, v_goal):
        if v not in graph.locations:
            raise UnknownLocation(v)
    if v_start == v_goal:
        return GlobalPath()
    heap = [(0.0, (v_start,))]
    done = set()
    while heap:
        cost, seq = heapq.heappop(heap)
        v = seq[-1]
        if v in done:
            continue
        done.add(v)
        if v == v_goal:
            return GlobalPath(tuple(graph.edge(a, b) for a, b in zip(seq, seq[1:])))
        for u in graph.neighbors(v):
            if u not in done:
                heapq.heappush(heap, (cost + edge_weight(graph.edge(v, u)), seq + (u,)))
    raise Unreachable(f"no chain of edges from {v_start} to {v_goal}")


# ---------------------------------------------------------------- local grid


def _cell_centers(grid: OccupancyGrid, mask: np.ndarray) -> np.ndarray:
    rows, cols = np.nonzero(mask)
    x, y = grid.index_to_coord(cols, rows)
    return np.column_stack([x, y])


def _corners(grid: OccupancyGrid) -> np.ndarray:
    # pulled in slightly so float error on an exact cell border cannot add a row or column
    h, w, r = grid.height, grid.width, grid.resolution
    e = 0.5 - 1e-6
    local = np.array([[-e, -e], [w - 1 + e, -e], [-e, h - 1 + e], [w - 1 + e, h - 1 + e]]) * r
    return grid.origin.apply(local)


def build_local_grid(graph: TopoGraph, v_cur: int, config: PlanConfig = PlanConfig()):
    """Fuse v_cur's grid with its neighbours' grids into one raster.

    The union lattice is axis-aligned in v_cur's frame with cell centers on
    multiples of the resolution. Every union cell takes, from each source
    grid, the cell its center falls in; in addition each occupied source
    cell marks the union cell its center lands in, so rotated thin walls
    stay closed. Fusion: occupied beats free beats unknown.

    Returns (grid, offset): the grid lives in its own frame with identity
    origin and ``offset`` maps v_cur-frame coordinates into it.
    """
    if v_cur not in graph.locations:
        raise UnknownLocation(v_cur)
    base = graph.locations[v_cur].grid
    res = base.resolution
    sources = [(base, IDENTITY)]
    for u in graph.neighbors(v_cur):
        sources.append((graph.locations[u].grid, graph.edge(v_cur, u).t_uv))

    corners = np.vstack([t.apply(_corners(g)) for g, t in sources])
    lo = np.floor(corners.min(axis=0) / res + 0.5).astype(int)
    hi = np.floor(corners.max(axis=0) / res + 0.5).astype(int)
    if config.local_window is not None:
        k = int(math.floor(config.local_window / res + 1e-9))
        lo = np.maximum(lo, -k)
        hi = np.minimum(hi, k)
    # the base grid is always covered in full
    b0 = np.floor(np.array([base.origin.x, base.origin.y]) / res + 0.5).astype(int)
    lo = np.minimum(lo, b0)
    hi = np.maximum(hi, b0 + np.array([base.width - 1, base.height - 1]))
    w, h = int(hi[0] - lo[0] + 1), int(hi[1] - lo[1] + 1)
    union = np.full((h, w), UNKNOWN, dtype=np.uint8)

    cols, rows = np.meshgrid(np.arange(w), np.arange(h))
    cx = (cols + lo[0]) * res
    cy = (rows + lo[1]) * res
    pts = np.column_stack([cx.ravel(), cy.ravel()])
    free = np.zeros(h * w, dtype=bool)
    occ = np.zeros(h * w, dtype=bool)
    for g, t in sources:
        local = inverse(t).apply(pts)
        vals = g.lookup(local[:, 0], local[:, 1])
        free |= vals == FREE
        occ |= vals == OCCUPIED
        occ_pts = t.apply(_cell_centers(g, g.cells == OCCUPIED))
        if len(occ_pts):
            ic = np.floor(occ_pts[:, 0] / res + 0.5).astype(int) - lo[0]
            ir = np.floor(occ_pts[:, 1] / res + 0.5).astype(int) - lo[1]
            ok = (ic >= 0) & (ic < w) & (ir >= 0) & (ir < h)
            occ[ir[ok] * w + ic[ok]] = True
    union.ravel()[free] = FREE
    union.ravel()[occ] = OCCUPIED
    offset = Pose2D(-lo[0] * res, -lo[1] * res, 0.0)
    return OccupancyGrid(res, IDENTITY, union), offset


# ---------------------------------------------------------------- local planning


def traversable(grid: OccupancyGrid, inflation_radius: float) -> np.ndarray:
    """Free cells farther than the inflation radius from any occupied cell."""
    occ = grid.cells == OCCUPIED
    trav = grid.cells == FREE
    if inflation_radius > 0 and occ.any():
        d = ndimage.distance_transform_edt(~occ) * grid.resolution
        trav &= d > inflation_radius + 1e-9
    return trav


def theta_star(trav: np.ndarray, grid: OccupancyGrid, start, goal) -> LocalPath:
    """Any-angle path over a precomputed traversability mask of ``grid``."""
    if grid.origin.theta != 0.0:
        raise ValueError("planning grids must be axis-aligned")
    fs = grid.coord_to_fractional(*start)
    fg = grid.coord_to_fractional(*goal)
    sc, sr = grid.coord_to_index(*start)
    gc, gr = grid.coord_to_index(*goal)
    if not grid.in_bounds(sc, sr) or not trav[sr, sc]:
        raise StartInObstacle(f"start {tuple(start)} is not traversable")
    if not grid.in_bounds(gc, gr) or not trav[gr, gc]:
        raise GoalUnreachable(f"goal {tuple(goal)} is not traversable")
    chain = _kernels.lazy_theta_star(trav, float(fs[0]), float(fs[1]), float(fg[0]), float(fg[1]))
    if len(chain) == 0:
        raise GoalUnreachable(f"no path from {tuple(start)} to {tuple(goal)}")
    blocked = ~trav
    # replace the goal cell center by the goal itself when visible
    if len(chain) >= 2 and _kernels.segment_clear(blocked, chain[-2, 0], chain[-2, 1], fg[0], fg[1]):
        chain[-1] = fg
    elif (chain[-1] != fg).any():
        chain = np.vstack([chain, fg])
    if len(chain) == 1:
        chain = np.vstack([chain, fg])
    res = grid.resolution
    xy = chain * res + np.array([grid.origin.x, grid.origin.y])
    wps = [tuple(start)] + [tuple(p) for p in xy[1:-1]] + [tuple(goal)]
    return LocalPath(wps)


def plan_local(grid: OccupancyGrid, start, goal, config: PlanConfig = PlanConfig()) -> LocalPath:
    """Theta* from start to goal over the inflated grid; unknown is blocked."""
    return theta_star(traversable(grid, config.inflation_radius), grid, start, goal)


def next_target(state: NavState, goal, path: GlobalPath) -> Pose2D:
    """Goal pose when in the goal location, else the first edge's relative pose."""
    if state.v_cur == goal.v_goal:
        return goal.t_goal
    if not path.edges:
        raise InconsistentPath("empty path but not at the goal location")
    first = path.edges[0]
    if state.v_cur not in (first.u, first.v):
        raise InconsistentPath(f"path does not depart location {state.v_cur}")
    return first.oriented(state.v_cur).t_uv

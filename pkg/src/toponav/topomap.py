"""Graph of locations: structure, maintenance state machine, localization."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import FREE, IDENTITY, OccupancyGrid, Pose2D, Scan2D, compose, inverse, translation_norm
from .perception import (
    Descriptor,
    MatchConfig,
    NoMatch,
    compute_descriptor,
    match_scans,
    overlap,
    scan_to_grid,
)


class UnknownLocation(KeyError):
    pass


class UnknownEdge(KeyError):
    pass


class SelfLoop(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Location:
    id: int
    grid: OccupancyGrid
    descriptor: Descriptor


@dataclass(frozen=True)
class TopoEdge:
    u: int
    v: int
    t_uv: Pose2D

    def key(self) -> tuple[int, int]:
        return (min(self.u, self.v), max(self.u, self.v))

    def oriented(self, start: int) -> "TopoEdge":
        """The same edge read as departing ``start``."""
        if start == self.u:
            return self
        if start == self.v:
            return TopoEdge(self.v, self.u, inverse(self.t_uv))
        raise UnknownEdge((start, self.u, self.v))

    @property
    def weight(self) -> float:
        return translation_norm(self.t_uv)


@dataclass(frozen=True)
class NavState:
    v_cur: int
    t_cur: Pose2D = IDENTITY
    # which branch of the update produced this state; informational only
    reason: str = ""


@dataclass(frozen=True)
class LocalizationHit:
    location_id: int
    rel_pose: Pose2D  # location frame expressed in the robot frame
    score: float

    @property
    def robot_pose(self) -> Pose2D:
        """Robot pose in the location frame."""
        return inverse(self.rel_pose)


@dataclass(frozen=True)
class TopoConfig:
    grid_resolution: float = 0.2
    grid_extent: float = 6.0
    descriptor_dim: int = 64
    overlap_threshold: float = 0.5
    min_travel: float = 1.0
    k_candidates: int = 5
    # global relocalization is stricter than tracking: a wrong hit corrupts the graph
    localize: MatchConfig = field(default_factory=lambda: MatchConfig(score_threshold=0.63))
    track: MatchConfig = field(
        default_factory=lambda: MatchConfig(window_xy=0.4, window_theta=math.radians(10), coarse_factor=1, top_k=1,
                                    inside_only=True)
    )
    transition: MatchConfig = field(
        default_factory=lambda: MatchConfig(window_xy=1.0, window_theta=math.radians(16), coarse_factor=1, top_k=1,
                                    inside_only=True)
    )
    # one-off placement of a start or goal scan against every location's neighbourhood grid
    resolve: MatchConfig = field(
        default_factory=lambda: MatchConfig(window_xy=6.0, coarse_factor=5, score_threshold=0.45)
    )


class TopoGraph:
    """Locations keyed by id plus undirected edges labelled with relative poses."""

    def __init__(self):
        self.locations: dict[int, Location] = {}
        self._edges: dict[tuple[int, int], TopoEdge] = {}
        self._adj: dict[int, set[int]] = {}
        self._next_id = 0

    def __len__(self) -> int:
        return len(self.locations)

    @property
    def edges(self) -> list[TopoEdge]:
        return [self._edges[k] for k in sorted(self._edges)]

    def num_edges(self) -> int:
        return len(self._edges)

    def add(self, grid: OccupancyGrid, descriptor: Descriptor) -> int:
        lid = self._next_id
        self._next_id += 1
        self.locations[lid] = Location(lid, grid, descriptor)
        self._adj[lid] = set()
        return lid

    def _check(self, lid: int):
        if lid not in self.locations:
            raise UnknownLocation(lid)

    def connect(self, u: int, v: int, t_uv: Pose2D) -> None:
        self._check(u)
        self._check(v)
        if u == v:
            raise SelfLoop(u)
        e = TopoEdge(u, v, t_uv)
        self._edges[e.key()] = e
        self._adj[u].add(v)
        self._adj[v].add(u)

    def remove_edge(self, u: int, v: int) -> None:
        key = (min(u, v), max(u, v))
        if key not in self._edges:
            raise UnknownEdge((u, v))
        del self._edges[key]
        self._adj[u].discard(v)
        self._adj[v].discard(u)

    def has_edge(self, u: int, v: int) -> bool:
        return (min(u, v), max(u, v)) in self._edges

    def edge(self, u: int, v: int) -> TopoEdge:
        """Edge between u and v, oriented to depart u."""
        key = (min(u, v), max(u, v))
        if key not in self._edges:
            raise UnknownEdge((u, v))
        return self._edges[key].oriented(u)

    def neighbors(self, v: int) -> list[int]:
        self._check(v)
        return sorted(self._adj[v])

    def copy(self) -> "TopoGraph":
        g = TopoGraph()
        g.locations = dict(self.locations)
        g._edges = dict(self._edges)
        g._adj = {k: set(v) for k, v in self._adj.items()}
        g._next_id = self._next_id
        return g

    # --------------------------------------------------------- persistence

    def save(self, directory) -> int:
        """Write graph.txt plus one loc_<id>.grid per location; returns total bytes."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for stale in d.glob("loc_*.grid"):
            stale.unlink()
        lines = []
        for lid in sorted(self.locations):
            vals = " ".join(repr(float(v)) for v in self.locations[lid].descriptor.values)
            lines.append(f"loc {lid} {vals}")
        for e in self.edges:
            t = e.t_uv
            lines.append(f"edge {e.u} {e.v} {t.x!r} {t.y!r} {t.theta!r}")
        (d / "graph.txt").write_text("\n".join(lines) + "\n")
        for lid, loc in self.locations.items():
            loc.grid.save(d / f"loc_{lid}.grid")
        return directory_bytes(d)

    @classmethod
    def load(cls, directory) -> "TopoGraph":
        d = Path(directory)
        g = cls()
        pending = []
        for line in (d / "graph.txt").read_text().splitlines():
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "loc":
                lid = int(parts[1])
                desc = Descriptor(np.array([float(v) for v in parts[2:]]))
                grid = OccupancyGrid.load(d / f"loc_{lid}.grid")
                g.locations[lid] = Location(lid, grid, desc)
                g._adj[lid] = set()
                g._next_id = max(g._next_id, lid + 1)
            elif parts[0] == "edge":
                pending.append((int(parts[1]), int(parts[2]), Pose2D(*(float(v) for v in parts[3:6]))))
            else:
                raise ValueError(f"unrecognized graph line: {line[:40]!r}")
        for u, v, t in pending:
            g.connect(u, v, t)
        return g


def directory_bytes(directory) -> int:
    return sum(os.path.getsize(p) for p in Path(directory).iterdir() if p.is_file())


# ---------------------------------------------------------------- operations


def location_descriptor(scan: Scan2D, config: TopoConfig = TopoConfig()) -> Descriptor:
    return compute_descriptor(scan, config.descriptor_dim)


def location_grid(scan: Scan2D, config: TopoConfig = TopoConfig()) -> OccupancyGrid:
    grid = scan_to_grid(scan, IDENTITY, config.grid_resolution, extent=config.grid_extent)
    # the observation point itself is free space even when nothing was hit
    col, row = grid.coord_to_index(0.0, 0.0)
    if grid.cells[row, col] != FREE:
        cells = grid.cells.copy()
        cells[row, col] = FREE
        grid = grid.with_cells(cells)
    return grid


def add_location(graph: TopoGraph, scan: Scan2D, config: TopoConfig = TopoConfig()) -> int:
    return graph.add(location_grid(scan, config), location_descriptor(scan, config))


def connect(graph: TopoGraph, u: int, v: int, t_uv: Pose2D) -> None:
    graph.connect(u, v, t_uv)


def remove_edge(graph: TopoGraph, u: int, v: int) -> None:
    graph.remove_edge(u, v)


def retrieve_candidates(graph: TopoGraph, desc: Descriptor, k: int = 5) -> list[int]:
    """Ids of the k locations with the nearest descriptors (ties: smaller id)."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if not graph.locations:
        return []
    ids = np.array(sorted(graph.locations))
    mat = np.stack([graph.locations[i].descriptor.values for i in ids])
    dist = np.linalg.norm(mat - desc.values[None, :], axis=1)
    order = np.lexsort((ids, dist))
    return [int(i) for i in ids[order[:k]]]


def localize(graph: TopoGraph, scan: Scan2D, config: TopoConfig = TopoConfig(),
             exclude=(), descriptor: Descriptor | None = None) -> list[LocalizationHit]:
    """Place recognition followed by scan-match verification of each candidate."""
    if not graph.locations or len(scan) == 0:
        return []
    desc = descriptor if descriptor is not None else location_descriptor(scan, config)
    hits = []
    for lid in retrieve_candidates(graph, desc, config.k_candidates):
        if lid in exclude:
            continue
        try:
            m = match_scans(scan, graph.locations[lid].grid, config.localize)
        except NoMatch:
            continue
        hits.append(LocalizationHit(lid, m.rel_pose, m.score))
    hits.sort(key=lambda h: (-h.score, h.location_id))
    return hits


def _try_enter(graph: TopoGraph, lid: int, scan: Scan2D, prior_in_loc: Pose2D,
               config: TopoConfig) -> Pose2D | None:
    """Robot pose in location ``lid`` if the scan matches it and overlaps enough."""
    grid = graph.locations[lid].grid
    try:
        m = match_scans(scan, grid, config.transition, prior=inverse(prior_in_loc))
    except NoMatch:
        return None
    pose = inverse(m.rel_pose)
    if overlap(scan, grid, pose, config.grid_extent) < config.overlap_threshold:
        return None
    return pose


def update_state(graph: TopoGraph, state: NavState, odom_delta: Pose2D, scan: Scan2D,
                 route=None, config: TopoConfig = TopoConfig()) -> NavState:
    """Advance (v_cur, t_cur) by one observation, growing the graph as needed.

    Order of attempts: stay inside the current location; move along an
    edge (route-next first, then neighbours by edge length); re-associate
    with a place-recognition hit (adds a loop-closing edge); finally add a
    new location. A failed move towards the route's next node removes that
    edge.
    """
    v = state.v_cur
    if v not in graph.locations:
        raise UnknownLocation(v)
    grid = graph.locations[v].grid
    t_tmp = compose(state.t_cur, odom_delta)
    try:
        m = match_scans(scan, grid, config.track, prior=inverse(t_tmp))
        t_tmp = inverse(m.rel_pose)
    except NoMatch:
        pass

    route_next = _route_next(route, v)
    thr = config.overlap_threshold
    if overlap(scan, grid, t_tmp, config.grid_extent) >= thr:
        if route_next is not None and graph.has_edge(v, route_next):
            # hand over early once the next node's observation point is closer
            t_vn = graph.edge(v, route_next).t_uv
            if math.hypot(t_tmp.x - t_vn.x, t_tmp.y - t_vn.y) < translation_norm(t_tmp):
                pose = _try_enter(graph, route_next, scan, compose(inverse(t_vn), t_tmp), config)
                if pose is not None:
                    return NavState(route_next, pose, "handover")
        return NavState(v, t_tmp, "inside")

    # outside the current location: try moving along an edge
    nbrs = graph.neighbors(v)
    nbrs.sort(key=lambda u: (graph.edge(v, u).weight, u))
    if route_next is not None and route_next in nbrs:
        nbrs.remove(route_next)
        nbrs.insert(0, route_next)
    tried = {v}
    for u in nbrs:
        tried.add(u)
        t_vu = graph.edge(v, u).t_uv
        pose = _try_enter(graph, u, scan, compose(inverse(t_vu), t_tmp), config)
        if pose is not None:
            return NavState(u, pose, "transition")
        if u == route_next:
            graph.remove_edge(v, u)

    # relocalize against the whole graph
    for hit in localize(graph, scan, config, exclude=tried):
        pose = hit.robot_pose
        if overlap(scan, graph.locations[hit.location_id].grid, pose, config.grid_extent) >= thr:
            graph.connect(v, hit.location_id, compose(t_tmp, hit.rel_pose))
            return NavState(hit.location_id, pose, "relocalized")

    if translation_norm(t_tmp) <= config.min_travel:
        return NavState(v, t_tmp, "gated")
    new = add_location(graph, scan, config)
    graph.connect(v, new, t_tmp)
    return NavState(new, IDENTITY, "new_location")


def _route_next(route, v: int):
    if route is None:
        return None
    edges = getattr(route, "edges", route)
    if not edges:
        return None
    first = edges[0]
    if first.u == v:
        return first.v
    if first.v == v:
        return first.u
    return None


def initial_state(graph: TopoGraph, scan: Scan2D, config: TopoConfig = TopoConfig()) -> NavState:
    """Start a fresh map, or localize into an existing one.

    On an empty graph the scan becomes location 0. Otherwise the best
    localization hit with enough overlap is used; with none, the scan is
    added as a new, unconnected location.
    """
    if graph.locations:
        for hit in localize(graph, scan, config):
            if overlap(scan, graph.locations[hit.location_id].grid, hit.robot_pose, config.grid_extent) >= config.overlap_threshold:
                return NavState(hit.location_id, hit.robot_pose, "relocalized")
    return NavState(add_location(graph, scan, config), IDENTITY, "new_location")
